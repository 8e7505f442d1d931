//! Proposal detector: scores every centered span proposal as entity or
//! non-entity and emits candidates.
//!
//! Per sentence, the encoder produces features f_k; logits are
//! `f_k · W_p + b_p` with 2R columns read as R (entity, non-entity) pairs,
//! each pair softmaxed independently. A proposal is accepted when its entity
//! probability exceeds 0.5, which by two-class softmax monotonicity is the
//! same as its entity logit exceeding its non-entity logit. Flat mode prunes
//! accepted proposals down to a non-overlapping set; nested mode keeps all.

use rand::{Rng, SeedableRng};

use crate::corpus::types::Sentence;
use crate::corpus::vocab::Vocabularies;
use crate::encoder::context::{ContextProvider, MixParams};
use crate::encoder::sentence::SentenceProcessor;
use crate::encoder::word::{WordDims, WordProcessor};
use crate::error::{Error, Result};
use crate::numeric::params::{Graph, ParamId, ParamSet};
use crate::numeric::tape::TensorId;
use crate::numeric::tensor::Tensor;
use crate::proposal::{enumerate_proposals, label_proposals, nms, sample_batch_proposals, Proposal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectMode {
    Nested,
    Flat,
}

impl std::str::FromStr for DetectMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested" => Ok(DetectMode::Nested),
            "flat" => Ok(DetectMode::Flat),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected nested or flat"
            ))),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DetectorConfig {
    /// Maximum proposal length R.
    pub r: usize,
    pub word_dims: WordDims,
    /// Word-recurrence hidden size per direction.
    pub d_wl: usize,
    /// Sentence-recurrence hidden size per direction.
    pub d_sl: usize,
    /// Context-mixing scale initialization (tuned per stage).
    pub gamma_init: f64,
    pub dropout: f64,
    /// Language-model layers per token; 0 disables context entirely.
    pub ctx_layers: usize,
    pub ctx_width: usize,
}

#[derive(Debug)]
pub struct DetectorModel {
    pub params: ParamSet,
    pub vocabs: Vocabularies,
    pub word: WordProcessor,
    pub sent: SentenceProcessor,
    pub mix: Option<MixParams>,
    pub w_p: ParamId,
    pub b_p: ParamId,
    pub config: DetectorConfig,
}

impl DetectorModel {
    pub fn init<R: Rng>(vocabs: Vocabularies, config: DetectorConfig, pretrained: Option<&Tensor>, rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::new();
        let word = WordProcessor::init(
            &mut params,
            "det.word",
            &vocabs.word,
            &vocabs.pos,
            &vocabs.char,
            config.word_dims,
            pretrained,
            rng,
        )?;
        let mix = if config.ctx_layers > 0 {
            Some(MixParams::init(&mut params, "det.ctx", config.ctx_layers, config.gamma_init)?)
        } else {
            None
        };
        let ctx_width = if config.ctx_layers > 0 { config.ctx_width } else { 0 };
        let sent = SentenceProcessor::init(
            &mut params,
            "det.sent",
            word.width(),
            config.d_wl,
            config.d_sl,
            ctx_width,
            rng,
        )?;
        let bound = 1.0 / ((2 * config.d_sl) as f64).sqrt();
        let w_p = params.add(
            "det.w_p",
            Tensor::rand_uniform(2 * config.d_sl, 2 * config.r, -bound, bound, rng),
            true,
        )?;
        let b_p = params.add(
            "det.b_p",
            Tensor::new(vec![1, 2 * config.r], vec![0.0; 2 * config.r])?,
            true,
        )?;
        Ok(DetectorModel {
            params,
            vocabs,
            word,
            sent,
            mix,
            w_p,
            b_p,
            config,
        })
    }

    pub fn r(&self) -> usize {
        self.config.r
    }

    /// Encode one sentence to its f rows. Dropout applies only when the
    /// graph is in training mode.
    pub fn encode<R: Rng>(
        &self,
        g: &mut Graph,
        rng: &mut R,
        sentence: &Sentence,
        provider: &ContextProvider,
    ) -> Result<Vec<TensorId>> {
        let xs = self.word.word_repr(g, &self.vocabs.word, &self.vocabs.pos, &self.vocabs.char, sentence)?;
        let xs = xs
            .into_iter()
            .map(|x| g.dropout(x, self.config.dropout, rng))
            .collect::<Result<Vec<_>>>()?;
        let ctx_rows = match (&self.mix, provider.get(sentence.id, sentence.len())?) {
            (Some(mix), Some(layers)) => Some(mix.mix_context(g, layers)?),
            (None, None) => None,
            (Some(_), None) => {
                return Err(Error::Contract(format!(
                    "detector expects context vectors but provider has none for sentence {}",
                    sentence.id
                )));
            }
            (None, Some(_)) => {
                return Err(Error::Contract(
                    "context vectors supplied to a detector configured without context".into(),
                ));
            }
        };
        let fs = self.sent.sentence_encode(g, &xs, ctx_rows.as_deref())?;
        fs.into_iter()
            .map(|f| g.dropout(f, self.config.dropout, rng))
            .collect()
    }

    /// Per-pair logits for every (position, proposal-type) slot: an
    /// `[N·R × 2]` matrix whose row k·R + r holds the (entity, non-entity)
    /// logits of proposal type r at position k.
    pub fn pair_logits(&self, g: &mut Graph, fs: &[TensorId]) -> Result<TensorId> {
        let f_mat = g.tape.concat(fs, 0)?;
        let w = g.param(self.w_p)?;
        let b = g.param(self.b_p)?;
        let z = g.tape.matmul(f_mat, w)?;
        let z = g.tape.add_row(z, b)?;
        let n = fs.len();
        g.tape.reshape(z, n * self.config.r, 2)
    }

    /// Sentence features as plain values, for transfer into the classifier.
    /// Computed in inference mode; nothing trained downstream reaches back
    /// into the detector through these.
    pub fn sentence_features(
        &self,
        sentence: &Sentence,
        provider: &ContextProvider,
    ) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let fs = self.encode(&mut g, &mut rng, sentence, provider)?;
        Ok(fs
            .into_iter()
            .map(|f| g.tape.value(f).values().to_vec())
            .collect())
    }

    /// Inference scores for one sentence: every in-bounds proposal with its
    /// entity probability.
    pub fn score_proposals(
        &self,
        sentence: &Sentence,
        provider: &ContextProvider,
    ) -> Result<Vec<Proposal>> {
        let mut g = Graph::new(&self.params, false);
        // inference never consumes randomness; any rng satisfies the signature
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let fs = self.encode(&mut g, &mut rng, sentence, provider)?;
        let logits = self.pair_logits(&mut g, &fs)?;
        let probs = g.tape.softmax_rows(logits)?;
        let pv = g.tape.value(probs).values();
        let mut proposals = enumerate_proposals(sentence.len(), self.config.r);
        for p in &mut proposals {
            let row = p.center * self.config.r + (p.length - 1);
            p.p_entity = Some(pv[row * 2]);
        }
        Ok(proposals)
    }

    /// Entity candidates for one sentence under the acceptance rule
    /// (p_entity > 0.5), pruned by NMS in flat mode.
    pub fn detect(
        &self,
        sentence: &Sentence,
        provider: &ContextProvider,
        mode: DetectMode,
    ) -> Result<Vec<Proposal>> {
        let scored = self.score_proposals(sentence, provider)?;
        let accepted: Vec<Proposal> = scored
            .into_iter()
            .filter(|p| p.p_entity.unwrap() > 0.5)
            .collect();
        Ok(match mode {
            DetectMode::Flat => nms(&accepted),
            DetectMode::Nested => {
                let mut out = accepted;
                out.sort_by_key(|p| (p.start, p.end));
                out
            }
        })
    }

    /// Down-sampled cross-entropy loss over one batch of sentences
    /// (mean over the sampled subset). `rng` drives dropout masks and
    /// negative sampling.
    pub fn batch_loss<R: Rng>(
        &self,
        g: &mut Graph,
        rng: &mut R,
        sentences: &[&Sentence],
        provider: &ContextProvider,
        n_b: usize,
    ) -> Result<TensorId> {
        let mut per_sentence: Vec<TensorId> = Vec::with_capacity(sentences.len());
        let mut labels: Vec<bool> = Vec::new();
        for s in sentences {
            let fs = self.encode(g, rng, s, provider)?;
            let logits = self.pair_logits(g, &fs)?;
            let proposals = enumerate_proposals(s.len(), self.config.r);
            // keep only in-bounds (k, r) slots, in enumeration order
            let rows: Vec<usize> = proposals
                .iter()
                .map(|p| p.center * self.config.r + (p.length - 1))
                .collect();
            let valid = g.tape.gather_rows(logits, &rows)?;
            per_sentence.push(valid);
            labels.extend(label_proposals(&proposals, &s.gold_boundaries()));
        }
        let all = g.tape.concat(&per_sentence, 0)?;
        let chosen = sample_batch_proposals(&labels, n_b, rng);
        if chosen.is_empty() {
            return Err(Error::Contract("empty proposal subset in detector loss".into()));
        }
        let picked = g.tape.gather_rows(all, &chosen)?;
        let targets: Vec<usize> = chosen.iter().map(|&i| if labels[i] { 0 } else { 1 }).collect();
        let ce = g.tape.cross_entropy_rows(picked, &targets)?;
        Ok(g.tape.mean_all(ce))
    }
}

/// Diagnostic dump of detector candidates: one row per candidate.
pub fn candidates_tsv(per_sentence: &[(usize, Vec<Proposal>)]) -> String {
    let mut out = String::from("sentence_id\tstart\tend\tp_entity\n");
    for (id, candidates) in per_sentence {
        for c in candidates {
            out.push_str(&format!(
                "{id}\t{}\t{}\t{:.6}\n",
                c.start,
                c.end,
                c.p_entity.unwrap_or(f64::NAN)
            ));
        }
    }
    out
}
