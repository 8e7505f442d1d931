//! Command-line surface: corpus statistics, two-phase training, evaluation,
//! prediction, and synthetic-corpus generation.
//!
//! Exit codes are a stable contract: 0 success, 2 configuration or
//! validation failure, 3 numeric failure during training.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict_entities, ClassifierModel, EntityCandidate};
use crate::config::{RunConfig, Split};
use crate::corpus::embeddings::load_pretrained_embeddings;
use crate::corpus::jsonl::sentence_to_jsonl;
use crate::corpus::stats::corpus_stats;
use crate::corpus::synthetic::{gen_synthetic_nested, GrammarConfig};
use crate::corpus::types::{Sentence, Token};
use crate::corpus::vocab::build_vocab;
use crate::detector::DetectorModel;
use crate::encoder::context::{load_context_file, ContextProvider};
use crate::error::{Error, Result};
use crate::evaluation::{
    detector_eval, end_to_end_eval, report_table, split_overlap_portions, DetectorEval,
    ScoreReport,
};
use crate::exec::map_slice;
use crate::numeric::params::ParamSet;
use crate::training::checkpoint::{
    atomic_write, load_classifier, load_detector, save_classifier, save_detector,
};
use crate::training::{train_classifier, train_detector, EpochRecord, EMBEDDINGS_STREAM};

#[derive(Parser, Debug)]
#[command(
    name = "nestner",
    version,
    about = "Two-stage nested/flat named-entity recognition"
)]
pub struct Cli {
    /// Run-configuration file (flat key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config assignment, e.g. --set seed=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Shorthand for --set mode=nested|flat.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Shorthand for --set ablation=none|no-context|no-attention.
    #[arg(long, global = true)]
    pub ablation: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    Detector,
    Classifier,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl SplitArg {
    fn to_split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Dev => "dev",
            SplitArg::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// JSON lines: {"id": 0, "tokens": [...], "pos": [...]} (id, pos optional).
    Jsonl,
    /// CoNLL-style blocks; first column token, second POS; tags ignored.
    Conll,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print per-split corpus statistics as TSV.
    Stats,
    /// Train the detector and/or classifier; writes checkpoints + history.
    Train {
        #[arg(long, value_enum, default_value_t = Phase::Both)]
        phase: Phase,
    },
    /// Score saved checkpoints on one split.
    Eval {
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Additionally score overlap-bearing and overlap-free sentences
        /// separately.
        #[arg(long)]
        split_overlap: bool,
        /// Directory holding detector.ckpt / classifier.ckpt
        /// (default: the configured output_dir).
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Tag raw sentences; one JSON object per input sentence on stdout.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Jsonl)]
        input_format: InputFormat,
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Write a deterministic synthetic nested-entity corpus as JSON lines.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = GrammarConfig::default().nested_prob)]
        nested_prob: f64,
    },
}

/// Parse arguments, run the command, and map failures onto exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/version output with exit code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = effective_config(&cli)?;
    match cli.command {
        Command::Stats => cmd_stats(&config),
        Command::Train { phase } => cmd_train(&config, phase),
        Command::Eval {
            split,
            split_overlap,
            model_dir,
        } => cmd_eval(&config, split, split_overlap, model_dir.as_deref()),
        Command::Predict {
            input,
            input_format,
            model_dir,
        } => cmd_predict(&config, &input, input_format, model_dir.as_deref()),
        Command::GenSynthetic {
            out,
            n,
            seed,
            nested_prob,
        } => cmd_gen_synthetic(&out, n, seed, nested_prob),
    }
}

/// File values, then --set overrides, then the dedicated shorthand flags.
fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut overrides = BTreeMap::new();
    for s in &cli.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got {s:?}"))
        })?;
        overrides.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(seed) = cli.seed {
        overrides.insert("seed".into(), seed.to_string());
    }
    if let Some(mode) = &cli.mode {
        overrides.insert("mode".into(), mode.clone());
    }
    if let Some(ablation) = &cli.ablation {
        overrides.insert("ablation".into(), ablation.clone());
    }
    config.apply(&overrides)?;
    Ok(config)
}

fn load_provider(config: &RunConfig) -> Result<ContextProvider> {
    match &config.context_path {
        Some(path) => load_context_file(path),
        None => Ok(ContextProvider::None),
    }
}

// ---------------------------------------------------------------- stats --

fn cmd_stats(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let mut printed_header = false;
    for (arg, available) in [
        (SplitArg::Train, config.has_split(Split::Train)),
        (SplitArg::Dev, config.has_split(Split::Dev)),
        (SplitArg::Test, config.has_split(Split::Test)),
    ] {
        if !available {
            continue;
        }
        let sentences = config.load_split(arg.to_split())?;
        let stats = corpus_stats(&sentences, config.r);
        if !printed_header {
            println!(
                "split\tsentences\toverlap_sentences\tentities\toverlap_entities\tlonger_than_r\tmax_entity_length"
            );
            printed_header = true;
        }
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            arg.name(),
            stats.sentences,
            stats.overlap_sentences,
            stats.entities,
            stats.overlap_entities,
            stats.longer_than_r,
            stats.max_entity_length
        );
    }
    if !printed_header {
        return Err(Error::Config(
            "no dataset splits configured; set train/dev/test paths or use format = synthetic"
                .into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- train --

#[derive(Debug, Default, Serialize, Deserialize)]
struct HistoryJson {
    detector: Vec<EpochRecord>,
    classifier: Vec<EpochRecord>,
}

fn write_history(path: &Path, history: &HistoryJson) -> Result<()> {
    let json = serde_json::to_string_pretty(history)
        .map_err(|e| Error::Config(format!("history serialization: {e}")))?;
    atomic_write(path, format!("{json}\n").as_bytes())
}

fn print_history(phase: &str, metric: &str, records: &[EpochRecord]) {
    for r in records {
        println!(
            "{phase} epoch {:>3}  loss {:>10.6}  {metric} {:.4}  lr {:.6}",
            r.epoch, r.loss, r.dev_metric, r.lr
        );
    }
}

fn cmd_train(config: &RunConfig, phase: Phase) -> Result<()> {
    config.validate()?;
    let provider = load_provider(config)?;
    let train = config.load_split(Split::Train)?;
    let dev = config.load_split(Split::Dev)?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))?;
    let det_path = config.output_dir.join("detector.ckpt");
    let cls_path = config.output_dir.join("classifier.ckpt");
    let history_path = config.output_dir.join("history.json");

    let mut history = HistoryJson::default();

    let detector = if phase == Phase::Classifier {
        load_detector(&det_path)?
    } else {
        let vocabs = build_vocab(&train, config.min_count)?;
        let pretrained = match &config.embeddings_path {
            Some(path) => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
                rng.set_stream(EMBEDDINGS_STREAM);
                let loaded = load_pretrained_embeddings(
                    path,
                    &vocabs.word,
                    config.word_dims.d_w,
                    &mut rng,
                )?;
                if loaded.skipped_lines > 0 {
                    eprintln!(
                        "warning: skipped {} unreadable embedding lines",
                        loaded.skipped_lines
                    );
                }
                Some(loaded.table.tensor)
            }
            None => None,
        };
        let (model, records) = train_detector(
            &train,
            &dev,
            &vocabs,
            config.detector_config(&provider),
            &config.train,
            config.mode,
            &provider,
            pretrained.as_ref(),
        )?;
        print_history("detector", "dev_span_f1", &records);
        save_detector(&model, &det_path)?;
        println!("wrote {}", det_path.display());
        history.detector = records;
        model
    };

    if phase == Phase::Detector {
        write_history(&history_path, &history)?;
        println!("wrote {}", history_path.display());
        return Ok(());
    }

    if phase == Phase::Classifier {
        // keep the detector curve from the earlier phase run, if recorded
        if let Ok(text) = std::fs::read_to_string(&history_path) {
            if let Ok(existing) = serde_json::from_str::<HistoryJson>(&text) {
                history.detector = existing.detector;
            }
        }
    }

    let (classifier, records) = train_classifier(
        &train,
        &dev,
        &detector,
        config.classifier_config(&provider),
        &config.train,
        config.mode,
        &provider,
    )?;
    print_history("classifier", "dev_typed_f1", &records);
    save_classifier(&classifier, &cls_path)?;
    println!("wrote {}", cls_path.display());
    history.classifier = records;
    write_history(&history_path, &history)?;
    println!("wrote {}", history_path.display());
    Ok(())
}

// ----------------------------------------------------------------- eval --

/// Compare like-named tensors between the freshly-configured parameter set
/// and the checkpointed one; any disagreement names the tensor.
fn check_checkpoint_dims(expected: &ParamSet, loaded: &ParamSet, what: &str) -> Result<()> {
    for (_, p) in loaded.iter() {
        match expected.by_name(&p.name) {
            None => {
                return Err(Error::Config(format!(
                    "{what} checkpoint holds tensor {} which this configuration does not define \
                     (mode/ablation/context mismatch?)",
                    p.name
                )))
            }
            Some(id) => {
                let e = &expected.get(id).tensor;
                if e.shape() != p.tensor.shape() {
                    return Err(Error::Config(format!(
                        "{what} tensor {}: checkpoint shape {:?} but configuration expects {:?}",
                        p.name,
                        p.tensor.shape(),
                        e.shape()
                    )));
                }
            }
        }
    }
    for (_, p) in expected.iter() {
        if loaded.by_name(&p.name).is_none() {
            return Err(Error::Config(format!(
                "{what} checkpoint is missing tensor {} required by this configuration",
                p.name
            )));
        }
    }
    Ok(())
}

fn load_models(
    config: &RunConfig,
    provider: &ContextProvider,
    model_dir: Option<&Path>,
) -> Result<(DetectorModel, ClassifierModel)> {
    let dir = model_dir.unwrap_or(&config.output_dir);
    let detector = load_detector(&dir.join("detector.ckpt"))?;
    let classifier = load_classifier(&dir.join("classifier.ckpt"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let expected_det = DetectorModel::init(
        detector.vocabs.clone(),
        config.detector_config(provider),
        None,
        &mut rng,
    )?;
    check_checkpoint_dims(&expected_det.params, &detector.params, "detector")?;
    let expected_cls = ClassifierModel::init(
        classifier.vocabs.clone(),
        config.classifier_config(provider),
        &mut rng,
    )?;
    check_checkpoint_dims(&expected_cls.params, &classifier.params, "classifier")?;
    Ok((detector, classifier))
}

#[derive(Debug, Serialize)]
struct PortionJson {
    sentences: usize,
    end_to_end: ScoreReport,
}

#[derive(Debug, Serialize)]
struct EvalJson {
    split: String,
    mode: crate::detector::DetectMode,
    detector: DetectorEval,
    end_to_end: ScoreReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    overlap_portion: Option<PortionJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    non_overlap_portion: Option<PortionJson>,
}

fn cmd_eval(
    config: &RunConfig,
    split: SplitArg,
    split_overlap: bool,
    model_dir: Option<&Path>,
) -> Result<()> {
    config.validate()?;
    let provider = load_provider(config)?;
    let (detector, classifier) = load_models(config, &provider, model_dir)?;
    let sentences = config.load_split(split.to_split())?;

    let det = detector_eval(&detector, &sentences, &provider, config.mode)?;
    let e2e = end_to_end_eval(&detector, &classifier, &sentences, &provider, config.mode)?;
    print!("{}", report_table(&format!("detector spans ({})", split.name()), &det.report));
    if det.gold_longer_than_limit > 0 {
        println!(
            "  ({} gold spans exceed the proposal length limit)",
            det.gold_longer_than_limit
        );
    }
    print!("{}", report_table(&format!("end to end ({})", split.name()), &e2e));

    let mut out = EvalJson {
        split: split.name().to_string(),
        mode: config.mode,
        detector: det,
        end_to_end: e2e,
        overlap_portion: None,
        non_overlap_portion: None,
    };

    if split_overlap {
        let (overlap_idx, plain_idx) = split_overlap_portions(&sentences);
        let portion = |name: &str, idx: &[usize]| -> Result<PortionJson> {
            let subset: Vec<Sentence> =
                idx.iter().map(|&i| sentences[i].clone()).collect();
            let report = if subset.is_empty() {
                ScoreReport {
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                    gold: 0,
                    predicted: 0,
                    matched: 0,
                    per_type: BTreeMap::new(),
                }
            } else {
                end_to_end_eval(&detector, &classifier, &subset, &provider, config.mode)?
            };
            print!(
                "{}",
                report_table(&format!("{name} ({} sentences)", subset.len()), &report)
            );
            Ok(PortionJson {
                sentences: subset.len(),
                end_to_end: report,
            })
        };
        out.overlap_portion = Some(portion("overlapping portion", &overlap_idx)?);
        out.non_overlap_portion = Some(portion("non-overlapping portion", &plain_idx)?);
    }

    let json = serde_json::to_string_pretty(&out)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    let path = model_dir.unwrap_or(&config.output_dir).join("eval.json");
    atomic_write(&path, format!("{json}\n").as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

// -------------------------------------------------------------- predict --

#[derive(Debug, Deserialize)]
struct InputLine {
    #[serde(default)]
    id: Option<usize>,
    tokens: Vec<String>,
    #[serde(default)]
    pos: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
struct PredictedEntity {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    kind: String,
    p_entity: f64,
    p_type: f64,
}

#[derive(Debug, Serialize)]
struct PredictRecord {
    id: usize,
    entities: Vec<PredictedEntity>,
}

#[derive(Debug, Serialize)]
struct ErrorRecord {
    line: usize,
    error: String,
}

/// Parse one `{"tokens": [...]}` input line into a bare sentence.
pub fn parse_jsonl_input(line: &str, fallback_id: usize) -> Result<Sentence> {
    let parsed: InputLine = serde_json::from_str(line)
        .map_err(|e| Error::Contract(format!("not a valid input object: {e}")))?;
    if let Some(pos) = &parsed.pos {
        if pos.len() != parsed.tokens.len() {
            return Err(Error::Contract(format!(
                "pos has {} entries for {} tokens",
                pos.len(),
                parsed.tokens.len()
            )));
        }
    }
    let tokens = parsed
        .tokens
        .iter()
        .enumerate()
        .map(|(i, surface)| {
            Token::new(
                surface.clone(),
                parsed.pos.as_ref().map(|p| p[i].clone()),
            )
        })
        .collect();
    Ok(Sentence {
        id: parsed.id.unwrap_or(fallback_id),
        tokens,
        gold: Vec::new(),
    })
}

/// Split CoNLL-style text into tag-free sentences: first column is the
/// token, second (when present) the POS tag; everything else is ignored.
pub fn parse_conll_input(text: &str) -> Vec<Sentence> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            if !tokens.is_empty() {
                sentences.push(Sentence {
                    id: sentences.len(),
                    tokens: std::mem::take(&mut tokens),
                    gold: Vec::new(),
                });
            }
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let mut fields = line.split_whitespace();
        let surface = fields.next().expect("non-empty line has a first field");
        let pos = fields.next().map(String::from);
        tokens.push(Token::new(surface, pos));
    }
    if !tokens.is_empty() {
        sentences.push(Sentence {
            id: sentences.len(),
            tokens,
            gold: Vec::new(),
        });
    }
    sentences
}

fn entity_records(
    classifier: &ClassifierModel,
    candidates: &[EntityCandidate],
) -> Result<Vec<PredictedEntity>> {
    candidates
        .iter()
        .map(|c| {
            let label_id = c.label.ok_or_else(|| {
                Error::Contract(format!("candidate ({}, {}) was never typed", c.start, c.end))
            })?;
            let kind = classifier
                .vocabs
                .label
                .get(label_id)
                .ok_or_else(|| {
                    Error::Contract(format!("type index {label_id} out of range"))
                })?
                .to_string();
            Ok(PredictedEntity {
                start: c.start,
                end: c.end,
                kind,
                p_entity: c.p_entity,
                p_type: c.p_type.unwrap_or(0.0),
            })
        })
        .collect()
}

fn cmd_predict(
    config: &RunConfig,
    input: &Path,
    input_format: InputFormat,
    model_dir: Option<&Path>,
) -> Result<()> {
    config.validate()?;
    let provider = load_provider(config)?;
    let (detector, classifier) = load_models(config, &provider, model_dir)?;
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;

    // (line number for error reporting, parse result)
    let parsed: Vec<(usize, Result<Sentence>)> = match input_format {
        InputFormat::Jsonl => text
            .lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| (i + 1, parse_jsonl_input(line, i)))
            .collect(),
        InputFormat::Conll => parse_conll_input(&text)
            .into_iter()
            .map(|s| (s.id + 1, Ok(s)))
            .collect(),
    };

    let outputs = map_slice(&parsed, |(line_no, parsed)| match parsed {
        Err(e) => (*line_no, Err(e.to_string())),
        Ok(s) if s.tokens.is_empty() => (
            *line_no,
            Ok(PredictRecord {
                id: s.id,
                entities: Vec::new(),
            }),
        ),
        Ok(s) => {
            let result = predict_entities(&detector, &classifier, s, &provider, config.mode)
                .and_then(|candidates| {
                    Ok(PredictRecord {
                        id: s.id,
                        entities: entity_records(&classifier, &candidates)?,
                    })
                });
            match result {
                Ok(record) => (*line_no, Ok(record)),
                Err(e) => (*line_no, Err(e.to_string())),
            }
        }
    });

    let mut failures = 0usize;
    for (line, output) in outputs {
        let json = match output {
            Ok(record) => serde_json::to_string(&record),
            Err(error) => {
                failures += 1;
                serde_json::to_string(&ErrorRecord { line, error })
            }
        }
        .map_err(|e| Error::Contract(format!("output serialization: {e}")))?;
        println!("{json}");
    }
    if failures > 0 {
        return Err(Error::Contract(format!(
            "{failures} of {} input sentences failed; see the error records above",
            parsed.len()
        )));
    }
    Ok(())
}

// --------------------------------------------------------- gen-synthetic --

fn cmd_gen_synthetic(out: &Path, n: usize, seed: u64, nested_prob: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&nested_prob) {
        return Err(Error::Config(format!(
            "nested-prob must be in [0, 1], got {nested_prob}"
        )));
    }
    let sentences = gen_synthetic_nested(seed, n, &GrammarConfig { nested_prob });
    let mut text = String::new();
    for s in &sentences {
        text.push_str(&sentence_to_jsonl(s));
        text.push('\n');
    }
    atomic_write(out, text.as_bytes())?;
    println!("wrote {} sentences to {}", sentences.len(), out.display());
    Ok(())
}
