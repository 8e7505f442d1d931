//! Two-phase optimization: the detector trains first, then freezes while
//! the classifier trains on its emitted candidates.
//!
//! Determinism contract: for a fixed seed, data order, dropout masks,
//! negative sampling, and parameter trajectories are identical across runs.
//! Each phase draws from its own seeded stream so phase two is unaffected
//! by how long phase one ran. The returned model is always the best-dev
//! snapshot, never the final epoch.

pub mod adam;
pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, ClassifierModel};
use crate::corpus::types::Sentence;
use crate::corpus::vocab::Vocabularies;
use crate::detector::{DetectMode, DetectorConfig, DetectorModel};
use crate::encoder::context::ContextProvider;
use crate::error::{Error, Result};
use crate::evaluation::{detector_eval, end_to_end_eval};
use crate::exec::map_slice;
use crate::numeric::params::{Graph, ParamSet};
use crate::numeric::tensor::Tensor;

pub use adam::{clip_global_norm, AdamState};

/// Seed streams: phase one and phase two consume independent sequences.
pub const DETECTOR_STREAM: u64 = 0;
pub const CLASSIFIER_STREAM: u64 = 1;
/// Stream for initializing embedding rows absent from a pretrained file.
pub const EMBEDDINGS_STREAM: u64 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Per-epoch exponential decay factor.
    pub decay: f64,
    /// Sentences per batch.
    pub batch_size: usize,
    /// Proposals kept per detector batch after negative down-sampling.
    pub n_b: usize,
    pub dropout: f64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Global gradient-norm ceiling; off by default.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            decay: 0.9,
            batch_size: 20,
            n_b: 128,
            dropout: 0.5,
            patience: 3,
            max_epochs: 50,
            seed: 0,
            shuffle: true,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0.is_nan() || self.lr0 <= 0.0 {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must be in (0, 1], got {}", self.decay)));
        }
        if self.batch_size == 0 || self.n_b == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size, n_b, max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_metric: f64,
    pub lr: f64,
}

pub fn lr_schedule(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop { best_epoch: usize },
}

/// Stop once the dev metric has gone `patience` consecutive epochs without
/// strict improvement over the best seen; the best epoch is the earliest
/// maximum.
pub fn early_stop_check(dev_metrics: &[f64], patience: usize) -> StopDecision {
    if dev_metrics.is_empty() {
        return StopDecision::Continue;
    }
    let mut best = 0usize;
    for (i, &m) in dev_metrics.iter().enumerate() {
        if m > dev_metrics[best] {
            best = i;
        }
    }
    if dev_metrics.len() - 1 - best >= patience {
        StopDecision::Stop { best_epoch: best }
    } else {
        StopDecision::Continue
    }
}

fn snapshot(ps: &ParamSet) -> Vec<Vec<f64>> {
    ps.iter().map(|(_, p)| p.tensor.values().to_vec()).collect()
}

fn restore(ps: &mut ParamSet, snap: &[Vec<f64>]) {
    for id in ps.ids().collect::<Vec<_>>() {
        ps.get_mut(id).tensor.values_mut().copy_from_slice(&snap[id.0]);
    }
}

fn check_split(name: &str, sentences: &[Sentence]) -> Result<()> {
    if sentences.is_empty() {
        return Err(Error::Config(format!(
            "{name} split is empty; training needs both train and dev sentences"
        )));
    }
    if let Some(s) = sentences.iter().find(|s| s.tokens.is_empty()) {
        return Err(Error::Config(format!("{name} sentence {} has no tokens", s.id)));
    }
    Ok(())
}

/// Phase one: train the span detector, early-stopped on dev span F1.
#[allow(clippy::too_many_arguments)]
pub fn train_detector(
    train: &[Sentence],
    dev: &[Sentence],
    vocabs: &Vocabularies,
    det_config: DetectorConfig,
    cfg: &TrainConfig,
    mode: DetectMode,
    provider: &ContextProvider,
    pretrained: Option<&Tensor>,
) -> Result<(DetectorModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    check_split("train", train)?;
    check_split("dev", dev)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(DETECTOR_STREAM);
    let mut model = DetectorModel::init(vocabs.clone(), det_config, pretrained, &mut rng)?;
    let mut adam = AdamState::new(&model.params);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(cfg.lr0, cfg.decay, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let sents: Vec<&Sentence> = chunk.iter().map(|&i| &train[i]).collect();
            let mut grads = model.params.zero_grads();
            {
                let mut g = Graph::new(&model.params, true);
                let loss = model.batch_loss(&mut g, &mut rng, &sents, provider, cfg.n_b)?;
                g.tape.backward(loss)?;
                g.collect_grads_into(&mut grads)?;
                loss_sum += g.tape.value(loss).values()[0];
            }
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam.step(&mut model.params, &grads, lr)?;
            batches += 1;
        }
        let dev_metric = detector_eval(&model, dev, provider, mode)?.report.f1;
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            dev_metric,
            lr,
        });
        if best.as_ref().is_none_or(|(m, _)| dev_metric > *m) {
            best = Some((dev_metric, snapshot(&model.params)));
        }
        let series: Vec<f64> = history.iter().map(|r| r.dev_metric).collect();
        if let StopDecision::Stop { .. } = early_stop_check(&series, cfg.patience) {
            break;
        }
    }
    if let Some((_, snap)) = best {
        restore(&mut model.params, &snap);
    }
    Ok((model, history))
}

/// One sentence's classifier training material: labeled candidate spans and
/// (when the context branch is on) the frozen detector features.
#[derive(Debug, Clone)]
pub struct ClassifierExample {
    pub sentence_index: usize,
    /// (start, end, gold class index); class `n_types` means NONE.
    pub candidates: Vec<(usize, usize, usize)>,
    pub features: Option<Vec<Vec<f64>>>,
}

/// Per-sentence intermediate: labeled candidate spans, optional context
/// features, and how many candidates the detector itself emitted.
type SentencePrep = (Vec<(usize, usize, usize)>, Option<Vec<Vec<f64>>>, usize);

/// Candidates for classifier training: everything the frozen detector emits
/// on each training sentence, plus every reachable gold span (length ≤ R),
/// labeled by exact boundary match against gold else NONE. Sentences that
/// contribute no candidates at all are omitted.
pub fn build_classifier_examples(
    detector: &DetectorModel,
    train: &[Sentence],
    provider: &ContextProvider,
    mode: DetectMode,
    with_features: bool,
) -> Result<Vec<ClassifierExample>> {
    let per_sentence = map_slice(train, |s| -> Result<SentencePrep> {
        let detected = detector.detect(s, provider, mode)?;
        let emitted = detected.len();
        let mut spans: Vec<(usize, usize)> = detected.iter().map(|p| p.span()).collect();
        for gold in &s.gold {
            if gold.len() <= detector.r() && !spans.contains(&(gold.start, gold.end)) {
                spans.push((gold.start, gold.end));
            }
        }
        spans.sort_unstable();
        let none = detector.vocabs.label.len();
        let labeled: Vec<(usize, usize, usize)> = spans
            .into_iter()
            .map(|(start, end)| {
                let class = s
                    .gold
                    .iter()
                    .find(|g| g.start == start && g.end == end)
                    .and_then(|g| detector.vocabs.label.lookup(&g.label))
                    .unwrap_or(none);
                (start, end, class)
            })
            .collect();
        let features = if with_features && !labeled.is_empty() {
            Some(detector.sentence_features(s, provider)?)
        } else {
            None
        };
        Ok((labeled, features, emitted))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let total_emitted: usize = per_sentence.iter().map(|(_, _, e)| e).sum();
    if total_emitted == 0 {
        return Err(Error::Training(format!(
            "detector produced no candidates on any of {} training sentences; \
             it has not learned enough to feed the classifier",
            train.len()
        )));
    }
    Ok(per_sentence
        .into_iter()
        .enumerate()
        .filter(|(_, (candidates, _, _))| !candidates.is_empty())
        .map(|(i, (candidates, features, _))| ClassifierExample {
            sentence_index: i,
            candidates,
            features,
        })
        .collect())
}

/// Phase two: train the classifier on frozen-detector candidates,
/// early-stopped on dev end-to-end typed F1.
pub fn train_classifier(
    train: &[Sentence],
    dev: &[Sentence],
    detector: &DetectorModel,
    cls_config: ClassifierConfig,
    cfg: &TrainConfig,
    mode: DetectMode,
    provider: &ContextProvider,
) -> Result<(ClassifierModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    check_split("train", train)?;
    check_split("dev", dev)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(CLASSIFIER_STREAM);
    let mut model = ClassifierModel::init(detector.vocabs.clone(), cls_config, &mut rng)?;
    model.adopt_tables(&detector.params, &detector.word)?;
    let examples =
        build_classifier_examples(detector, train, provider, mode, model.config.use_context)?;
    if examples.is_empty() {
        return Err(Error::Training(
            "no sentence contributed classifier training candidates".into(),
        ));
    }
    let mut adam = AdamState::new(&model.params);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(cfg.lr0, cfg.decay, epoch);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = model.params.zero_grads();
            {
                let mut g = Graph::new(&model.params, true);
                let mut sums = Vec::with_capacity(chunk.len());
                let mut count = 0usize;
                for &i in chunk {
                    let ex = &examples[i];
                    let s = &train[ex.sentence_index];
                    let (sum, n) = model.sentence_loss(
                        &mut g,
                        &mut rng,
                        s,
                        provider,
                        ex.features.as_deref(),
                        &ex.candidates,
                    )?;
                    sums.push(sum);
                    count += n;
                }
                let total = g.tape.concat(&sums, 1)?;
                let total = g.tape.sum_all(total);
                let loss = g.tape.scale(total, 1.0 / count as f64);
                g.tape.backward(loss)?;
                g.collect_grads_into(&mut grads)?;
                loss_sum += g.tape.value(loss).values()[0];
            }
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam.step(&mut model.params, &grads, lr)?;
            batches += 1;
        }
        let dev_metric = end_to_end_eval(detector, &model, dev, provider, mode)?.f1;
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            dev_metric,
            lr,
        });
        if best.as_ref().is_none_or(|(m, _)| dev_metric > *m) {
            best = Some((dev_metric, snapshot(&model.params)));
        }
        let series: Vec<f64> = history.iter().map(|r| r.dev_metric).collect();
        if let StopDecision::Stop { .. } = early_stop_check(&series, cfg.patience) {
            break;
        }
    }
    if let Some((_, snap)) = best {
        restore(&mut model.params, &snap);
    }
    Ok((model, history))
}
