//! Run configuration: a flat `key = value` text file with `${VAR}`
//! environment expansion, overridable from command-line flags.
//!
//! The format is deliberately trivial — one assignment per line, `#` lines
//! are comments — so configs can be generated or inspected by any tool.
//! Every key is checked against the documented set; a typo is an error,
//! not a silent default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::classifier::ClassifierConfig;
use crate::corpus::conll::{load_conll, TagScheme};
use crate::corpus::jsonl::load_nested_jsonl;
use crate::corpus::synthetic::{gen_synthetic_nested, GrammarConfig};
use crate::corpus::types::Sentence;
use crate::detector::{DetectMode, DetectorConfig};
use crate::encoder::context::ContextProvider;
use crate::encoder::word::WordDims;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Conll,
    NestedJsonl,
    Synthetic,
}

impl FromStr for DataFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conll" => Ok(DataFormat::Conll),
            "nested-jsonl" => Ok(DataFormat::NestedJsonl),
            "synthetic" => Ok(DataFormat::Synthetic),
            other => Err(Error::Config(format!(
                "unknown format {other:?}; expected conll, nested-jsonl, or synthetic"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Classify from the entity representation alone; the sentence-context
    /// branch (transfer, attention, context recurrence) is removed.
    NoContext,
    /// Keep the context branch but feed it unweighted positions.
    NoAttention,
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "no-context" => Ok(Ablation::NoContext),
            "no-attention" => Ok(Ablation::NoAttention),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?}; expected none, no-context, or no-attention"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub format: DataFormat,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub embeddings_path: Option<PathBuf>,
    /// Precomputed contextual-vector file; absent means no mixing layer.
    pub context_path: Option<PathBuf>,
    pub mode: DetectMode,
    pub ablation: Ablation,
    pub output_dir: PathBuf,
    /// Words rarer than this in training map to the unknown index.
    pub min_count: usize,
    /// Maximum proposal length: each token anchors proposals of length 1..=r.
    pub r: usize,
    pub word_dims: WordDims,
    pub d_wl: usize,
    pub d_sl: usize,
    pub d_el: usize,
    pub d_ml: usize,
    pub d_h: usize,
    pub gamma_init: f64,
    /// Ranking-loss margin.
    pub delta: f64,
    pub synthetic_seed: u64,
    pub synthetic_train: usize,
    pub synthetic_dev: usize,
    pub synthetic_test: usize,
    pub synthetic_nested_prob: f64,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format: DataFormat::Synthetic,
            train_path: None,
            dev_path: None,
            test_path: None,
            embeddings_path: None,
            context_path: None,
            mode: DetectMode::Nested,
            ablation: Ablation::None,
            output_dir: PathBuf::from("runs/out"),
            min_count: 1,
            r: 6,
            word_dims: WordDims {
                d_w: 32,
                d_pos: 8,
                d_c: 8,
                d_cl: 8,
                use_pos: true,
            },
            d_wl: 24,
            d_sl: 24,
            d_el: 24,
            d_ml: 24,
            d_h: 32,
            gamma_init: 1.0,
            delta: 5.0,
            synthetic_seed: 7,
            synthetic_train: 500,
            synthetic_dev: 100,
            synthetic_test: 100,
            synthetic_nested_prob: GrammarConfig::default().nested_prob,
            train: TrainConfig::default(),
        }
    }
}

/// Replace each `${NAME}` with the value of environment variable `NAME`.
fn expand_env(value: &str) -> Result<String> {
    let mut out = String::with_capacity(value.len());
    let mut rest = value;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let tail = &rest[start + 2..];
        let end = tail.find('}').ok_or_else(|| {
            Error::Config(format!("unterminated ${{...}} in config value {value:?}"))
        })?;
        let name = &tail[..end];
        let expanded = std::env::var(name).map_err(|_| {
            Error::Config(format!(
                "environment variable {name:?} referenced in config is not set"
            ))
        })?;
        out.push_str(&expanded);
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Parse the flat format: one `key = value` per line; blank lines and lines
/// starting with `#` are ignored. Later assignments win.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("config line {}: expected key = value, got {raw:?}", i + 1))
        })?;
        map.insert(key.trim().to_string(), expand_env(value.trim())?);
    }
    Ok(map)
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("config key {key}: cannot parse {value:?} ({e})")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() || value == "none" {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::default();
        config.apply(&parse_kv(&text)?)?;
        Ok(config)
    }

    /// Apply parsed assignments over the current values. Unknown keys are
    /// configuration errors.
    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in map {
            let v = value.as_str();
            match key.as_str() {
                "format" => self.format = v.parse()?,
                "train" => self.train_path = opt_path(v),
                "dev" => self.dev_path = opt_path(v),
                "test" => self.test_path = opt_path(v),
                "embeddings" => self.embeddings_path = opt_path(v),
                "context" => self.context_path = opt_path(v),
                "mode" => self.mode = v.parse()?,
                "ablation" => self.ablation = v.parse()?,
                "output_dir" => self.output_dir = PathBuf::from(v),
                "min_count" => self.min_count = parse_as(key, v)?,
                "r" => self.r = parse_as(key, v)?,
                "word_dim" => self.word_dims.d_w = parse_as(key, v)?,
                "pos_dim" => self.word_dims.d_pos = parse_as(key, v)?,
                "char_dim" => self.word_dims.d_c = parse_as(key, v)?,
                "char_hidden" => self.word_dims.d_cl = parse_as(key, v)?,
                "use_pos" => self.word_dims.use_pos = parse_as(key, v)?,
                "word_hidden" => self.d_wl = parse_as(key, v)?,
                "sentence_hidden" => self.d_sl = parse_as(key, v)?,
                "entity_hidden" => self.d_el = parse_as(key, v)?,
                "attention_hidden" => self.d_ml = parse_as(key, v)?,
                "head_hidden" => self.d_h = parse_as(key, v)?,
                "gamma_init" => self.gamma_init = parse_as(key, v)?,
                "margin" => self.delta = parse_as(key, v)?,
                "lr" => self.train.lr0 = parse_as(key, v)?,
                "lr_decay" => self.train.decay = parse_as(key, v)?,
                "batch_size" => self.train.batch_size = parse_as(key, v)?,
                "negatives" => self.train.n_b = parse_as(key, v)?,
                "dropout" => self.train.dropout = parse_as(key, v)?,
                "patience" => self.train.patience = parse_as(key, v)?,
                "max_epochs" => self.train.max_epochs = parse_as(key, v)?,
                "seed" => self.train.seed = parse_as(key, v)?,
                "shuffle" => self.train.shuffle = parse_as(key, v)?,
                "clip_norm" => {
                    self.train.clip_norm = if v.is_empty() || v == "none" {
                        None
                    } else {
                        Some(parse_as(key, v)?)
                    }
                }
                "synthetic_seed" => self.synthetic_seed = parse_as(key, v)?,
                "synthetic_train" => self.synthetic_train = parse_as(key, v)?,
                "synthetic_dev" => self.synthetic_dev = parse_as(key, v)?,
                "synthetic_test" => self.synthetic_test = parse_as(key, v)?,
                "synthetic_nested_prob" => self.synthetic_nested_prob = parse_as(key, v)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown config key {other:?}; see the documented key list"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Structural checks that need no data: dimensions, schedule, and that
    /// every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.r == 0 {
            return Err(Error::Config("r must be at least 1".into()));
        }
        let d = &self.word_dims;
        for (name, dim) in [
            ("word_dim", d.d_w),
            ("char_dim", d.d_c),
            ("char_hidden", d.d_cl),
            ("word_hidden", self.d_wl),
            ("sentence_hidden", self.d_sl),
            ("entity_hidden", self.d_el),
            ("attention_hidden", self.d_ml),
            ("head_hidden", self.d_h),
        ] {
            if dim == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if d.use_pos && d.d_pos == 0 {
            return Err(Error::Config("pos_dim must be at least 1 when use_pos = true".into()));
        }
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(Error::Config(format!("margin must be positive, got {}", self.delta)));
        }
        if !self.gamma_init.is_finite() {
            return Err(Error::Config("gamma_init must be finite".into()));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.synthetic_nested_prob) {
            return Err(Error::Config(format!(
                "synthetic_nested_prob must be in [0, 1], got {}",
                self.synthetic_nested_prob
            )));
        }
        if self.format == DataFormat::Synthetic
            && (self.synthetic_train == 0 || self.synthetic_dev == 0)
        {
            return Err(Error::Config(
                "synthetic_train and synthetic_dev must be at least 1".into(),
            ));
        }
        for (key, path) in [
            ("train", &self.train_path),
            ("dev", &self.dev_path),
            ("test", &self.test_path),
            ("embeddings", &self.embeddings_path),
            ("context", &self.context_path),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "config key {key}: path {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn detector_config(&self, provider: &ContextProvider) -> DetectorConfig {
        DetectorConfig {
            r: self.r,
            word_dims: self.word_dims,
            d_wl: self.d_wl,
            d_sl: self.d_sl,
            gamma_init: self.gamma_init,
            dropout: self.train.dropout,
            ctx_layers: provider.n_layers(),
            ctx_width: provider.width(),
        }
    }

    pub fn classifier_config(&self, provider: &ContextProvider) -> ClassifierConfig {
        ClassifierConfig {
            word_dims: self.word_dims,
            d_wl: self.d_wl,
            d_el: self.d_el,
            d_ml: self.d_ml,
            d_h: self.d_h,
            d_sl: self.d_sl,
            gamma_init: self.gamma_init,
            dropout: self.train.dropout,
            ctx_layers: provider.n_layers(),
            ctx_width: provider.width(),
            use_context: self.ablation != Ablation::NoContext,
            use_attention: self.ablation == Ablation::None,
            delta: self.delta,
        }
    }

    /// Whether this configuration can supply the given split at all.
    pub fn has_split(&self, split: Split) -> bool {
        if self.format == DataFormat::Synthetic {
            return true;
        }
        match split {
            Split::Train => self.train_path.is_some(),
            Split::Dev => self.dev_path.is_some(),
            Split::Test => self.test_path.is_some(),
        }
    }

    fn split_path(&self, split: Split) -> Result<&Path> {
        let (name, p) = match split {
            Split::Train => ("train", &self.train_path),
            Split::Dev => ("dev", &self.dev_path),
            Split::Test => ("test", &self.test_path),
        };
        p.as_deref().ok_or_else(|| {
            Error::Config(format!("config key {name} is required for this command"))
        })
    }

    /// Load one split in the configured format. Synthetic splits derive
    /// their seeds from `synthetic_seed` (train), +1 (dev), +2 (test).
    pub fn load_split(&self, split: Split) -> Result<Vec<Sentence>> {
        let sentences = match self.format {
            DataFormat::Synthetic => {
                let grammar = GrammarConfig {
                    nested_prob: self.synthetic_nested_prob,
                };
                let (seed, n) = match split {
                    Split::Train => (self.synthetic_seed, self.synthetic_train),
                    Split::Dev => (self.synthetic_seed + 1, self.synthetic_dev),
                    Split::Test => (self.synthetic_seed + 2, self.synthetic_test),
                };
                gen_synthetic_nested(seed, n, &grammar)
            }
            DataFormat::Conll => load_conll(self.split_path(split)?, TagScheme::Auto)?.0,
            DataFormat::NestedJsonl => load_nested_jsonl(self.split_path(split)?)?,
        };
        check_mode_compat(self.mode, &sentences, split)?;
        Ok(sentences)
    }
}

/// Flat mode scores non-overlapping predictions against gold; overlapping
/// gold annotations would make its recall ceiling silently less than 1, so
/// the combination is rejected outright.
pub fn check_mode_compat(mode: DetectMode, sentences: &[Sentence], split: Split) -> Result<()> {
    if mode != DetectMode::Flat {
        return Ok(());
    }
    for s in sentences {
        for i in 0..s.gold.len() {
            for j in i + 1..s.gold.len() {
                if s.gold[i].overlaps(&s.gold[j]) {
                    return Err(Error::Config(format!(
                        "flat mode cannot be scored against overlapping gold annotations: \
                         {split:?} sentence {} has overlapping spans ({}, {}) and ({}, {})",
                        s.id,
                        s.gold[i].start,
                        s.gold[i].end,
                        s.gold[j].start,
                        s.gold[j].end
                    )));
                }
            }
        }
    }
    Ok(())
}
