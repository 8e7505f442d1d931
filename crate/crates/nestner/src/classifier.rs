//! Entity classifier: assigns a type (or NONE) to each candidate span.
//!
//! A candidate is encoded by running the classifier's own word pipeline over
//! just its tokens (entity recurrence final states → e), while the full
//! sentence context arrives as frozen detector features C. Attention weights
//! a = softmax(C·W·eᵀ) rescale each context vector; an attention recurrence
//! summarizes the weighted sequence into m, and a two-layer head scores
//! [m; e] over D_t+1 classes, the extra class meaning "not an entity".
//! Training uses a hinge-ranking loss on the pre-softmax activations: with
//! probabilities bounded by 1 a margin of 5 could never be met, so the
//! margin constraint lives on the activation scale.

use rand::{Rng, SeedableRng};

use crate::corpus::types::Sentence;
use crate::corpus::vocab::Vocabularies;
use crate::encoder::context::{ContextProvider, MixParams};
use crate::encoder::word::{WordDims, WordProcessor};
use crate::error::{Error, Result};
use crate::numeric::lstm::BiLstm;
use crate::numeric::params::{Graph, ParamId, ParamSet};
use crate::numeric::tape::TensorId;
use crate::numeric::tensor::Tensor;

/// A span put forward by the detector, optionally typed by the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityCandidate {
    pub sentence_id: usize,
    pub start: usize,
    pub end: usize,
    pub p_entity: f64,
    /// Type index into the label vocabulary once classified; `None` before.
    pub label: Option<usize>,
    /// Probability assigned to the chosen type.
    pub p_type: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassifierConfig {
    pub word_dims: WordDims,
    /// Word-recurrence hidden size per direction.
    pub d_wl: usize,
    /// Entity-recurrence hidden size per direction.
    pub d_el: usize,
    /// Attention-recurrence hidden size per direction.
    pub d_ml: usize,
    /// Head hidden size.
    pub d_h: usize,
    /// Detector sentence-recurrence size per direction (C rows are 2·d_sl wide).
    pub d_sl: usize,
    pub gamma_init: f64,
    pub dropout: f64,
    pub ctx_layers: usize,
    pub ctx_width: usize,
    /// Attention branch over sentence features; off = classify from e alone.
    pub use_context: bool,
    /// Attention weighting inside that branch; off = recur over raw C.
    pub use_attention: bool,
    /// Hinge-ranking margin.
    pub delta: f64,
}

#[derive(Debug)]
pub struct ClassifierModel {
    pub params: ParamSet,
    pub vocabs: Vocabularies,
    pub word: WordProcessor,
    pub word_rnn: BiLstm,
    pub mix: Option<MixParams>,
    pub entity_rnn: BiLstm,
    pub w_att: Option<ParamId>,
    pub att_rnn: Option<BiLstm>,
    pub w_c1: ParamId,
    pub b_c1: ParamId,
    pub w_c2: ParamId,
    pub b_c2: ParamId,
    pub config: ClassifierConfig,
    n_types: usize,
}

/// Per-sentence precomputation shared by every candidate in the sentence:
/// word representations and mixed language-model context for each token.
pub struct SentenceEncoding {
    pub xs: Vec<TensorId>,
    pub ctx: Option<Vec<TensorId>>,
}

impl ClassifierModel {
    pub fn init<R: Rng>(vocabs: Vocabularies, config: ClassifierConfig, rng: &mut R) -> Result<Self> {
        let n_types = vocabs.label.len();
        if n_types == 0 {
            return Err(Error::Contract("classifier needs at least one entity type".into()));
        }
        let mut params = ParamSet::new();
        let word = WordProcessor::init(
            &mut params,
            "cls.word",
            &vocabs.word,
            &vocabs.pos,
            &vocabs.char,
            config.word_dims,
            None,
            rng,
        )?;
        let word_rnn = BiLstm::init(&mut params, "cls.wrnn", word.width(), config.d_wl, rng)?;
        let mix = if config.ctx_layers > 0 {
            Some(MixParams::init(&mut params, "cls.ctx", config.ctx_layers, config.gamma_init)?)
        } else {
            None
        };
        let ctx_width = if config.ctx_layers > 0 { config.ctx_width } else { 0 };
        let entity_rnn = BiLstm::init(
            &mut params,
            "cls.ernn",
            2 * config.d_wl + ctx_width,
            config.d_el,
            rng,
        )?;
        let (w_att, att_rnn) = if config.use_context {
            let w_att = if config.use_attention {
                let bound = 1.0 / ((2 * config.d_sl) as f64).sqrt();
                Some(params.add(
                    "cls.w_att",
                    Tensor::rand_uniform(2 * config.d_sl, 2 * config.d_el, -bound, bound, rng),
                    true,
                )?)
            } else {
                None
            };
            let att_rnn = BiLstm::init(&mut params, "cls.arnn", 2 * config.d_sl, config.d_ml, rng)?;
            (w_att, Some(att_rnn))
        } else {
            (None, None)
        };
        let o_width = if config.use_context {
            2 * config.d_ml + 2 * config.d_el
        } else {
            2 * config.d_el
        };
        let bound1 = 1.0 / (o_width as f64).sqrt();
        let w_c1 = params.add(
            "cls.w_c1",
            Tensor::rand_uniform(o_width, config.d_h, -bound1, bound1, rng),
            true,
        )?;
        let b_c1 = params.add("cls.b_c1", Tensor::new(vec![1, config.d_h], vec![0.0; config.d_h])?, true)?;
        let bound2 = 1.0 / (config.d_h as f64).sqrt();
        let w_c2 = params.add(
            "cls.w_c2",
            Tensor::rand_uniform(config.d_h, n_types + 1, -bound2, bound2, rng),
            true,
        )?;
        let b_c2 = params.add(
            "cls.b_c2",
            Tensor::new(vec![1, n_types + 1], vec![0.0; n_types + 1])?,
            true,
        )?;
        Ok(ClassifierModel {
            params,
            vocabs,
            word,
            word_rnn,
            mix,
            entity_rnn,
            w_att,
            att_rnn,
            w_c1,
            b_c1,
            w_c2,
            b_c2,
            config,
            n_types,
        })
    }

    /// Number of real entity types D_t. Class index `n_types()` is NONE.
    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn none_index(&self) -> usize {
        self.n_types
    }

    /// Copy the word and POS embedding tables from a trained detector so
    /// both stages ground tokens in the same (further trainable) space.
    pub fn adopt_tables(&mut self, src_params: &ParamSet, src_word: &WordProcessor) -> Result<()> {
        let copy = |dst: &mut ParamSet, dst_id: ParamId, src: &Tensor| -> Result<()> {
            let dst_t = &mut dst.get_mut(dst_id).tensor;
            if dst_t.shape() != src.shape() {
                return Err(Error::Config(format!(
                    "embedding table shape {:?} does not match detector table {:?}",
                    dst_t.shape(),
                    src.shape()
                )));
            }
            dst_t.values_mut().copy_from_slice(src.values());
            Ok(())
        };
        copy(
            &mut self.params,
            self.word.word_table,
            &src_params.get(src_word.word_table).tensor,
        )?;
        match (self.word.pos_table, src_word.pos_table) {
            (Some(dst), Some(src)) => copy(&mut self.params, dst, &src_params.get(src).tensor)?,
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "POS table configuration differs between detector and classifier".into(),
                ));
            }
        }
        Ok(())
    }

    /// Token-level work shared by all candidates of one sentence.
    pub fn encode_sentence<R: Rng>(
        &self,
        g: &mut Graph,
        rng: &mut R,
        sentence: &Sentence,
        provider: &ContextProvider,
    ) -> Result<SentenceEncoding> {
        let xs = self.word.word_repr(g, &self.vocabs.word, &self.vocabs.pos, &self.vocabs.char, sentence)?;
        let xs = xs
            .into_iter()
            .map(|x| g.dropout(x, self.config.dropout, rng))
            .collect::<Result<Vec<_>>>()?;
        let ctx = match (&self.mix, provider.get(sentence.id, sentence.len())?) {
            (Some(mix), Some(layers)) => Some(mix.mix_context(g, layers)?),
            (None, None) => None,
            (Some(_), None) => {
                return Err(Error::Contract(format!(
                    "classifier expects context vectors but provider has none for sentence {}",
                    sentence.id
                )));
            }
            (None, Some(_)) => {
                return Err(Error::Contract(
                    "context vectors supplied to a classifier configured without context".into(),
                ));
            }
        };
        Ok(SentenceEncoding { xs, ctx })
    }

    /// Entity representation e: word recurrence over the candidate's tokens,
    /// per-token context concatenation, then the entity recurrence's final
    /// states. Width 2·d_el.
    pub fn entity_encode<R: Rng>(
        &self,
        g: &mut Graph,
        rng: &mut R,
        enc: &SentenceEncoding,
        start: usize,
        end: usize,
    ) -> Result<TensorId> {
        if start > end || end >= enc.xs.len() {
            return Err(Error::Contract(format!(
                "candidate span ({start}, {end}) out of bounds for {} tokens",
                enc.xs.len()
            )));
        }
        let hs = self.word_rnn.run(g, &enc.xs[start..=end])?;
        let hs = hs
            .into_iter()
            .map(|h| g.dropout(h, self.config.dropout, rng))
            .collect::<Result<Vec<_>>>()?;
        let inputs = match &enc.ctx {
            Some(ctx) => hs
                .iter()
                .enumerate()
                .map(|(k, &h)| g.tape.concat(&[h, ctx[start + k]], 1))
                .collect::<Result<Vec<_>>>()?,
            None => hs,
        };
        let e = self.entity_rnn.final_state(g, &inputs)?;
        g.dropout(e, self.config.dropout, rng)
    }

    /// Attention distribution over the N context positions: a 1×N row that
    /// is nonnegative and sums to 1.
    pub fn attention_distribution(&self, g: &mut Graph, c: &[Vec<f64>], e: TensorId) -> Result<TensorId> {
        let w_id = self.w_att.ok_or_else(|| {
            Error::Contract("attention weights requested but attention is disabled".into())
        })?;
        let c_mat = g.tape.constant(Tensor::from_rows(c)?);
        let w = g.param(w_id)?;
        let cw = g.tape.matmul(c_mat, w)?;
        let et = g.tape.transpose(e);
        let scores = g.tape.matmul(cw, et)?;
        let scores_row = g.tape.transpose(scores);
        g.tape.softmax_rows(scores_row)
    }

    /// Attention summary m over the transferred sentence features. Returns
    /// m and, when weighting is on, the attention distribution.
    pub fn attend_context<R: Rng>(
        &self,
        g: &mut Graph,
        rng: &mut R,
        c: &[Vec<f64>],
        e: TensorId,
    ) -> Result<(TensorId, Option<TensorId>)> {
        let att_rnn = self.att_rnn.as_ref().ok_or_else(|| {
            Error::Contract("context branch requested but the classifier runs without it".into())
        })?;
        if c.is_empty() {
            return Err(Error::Contract("empty context feature sequence".into()));
        }
        for row in c {
            if row.len() != 2 * self.config.d_sl {
                return Err(Error::Shape {
                    op: "attend_context",
                    lhs: vec![1, 2 * self.config.d_sl],
                    rhs: vec![1, row.len()],
                });
            }
        }
        let rows: Vec<TensorId> = c
            .iter()
            .map(|r| Ok(g.tape.constant(Tensor::row(r.clone()))))
            .collect::<Result<Vec<_>>>()?;
        let (inputs, a) = if self.config.use_attention {
            let a = self.attention_distribution(g, c, e)?;
            let weighted = rows
                .iter()
                .enumerate()
                .map(|(k, &row)| {
                    let ak = g.tape.slice_cols(a, k, k + 1)?;
                    g.tape.mul(row, ak)
                })
                .collect::<Result<Vec<_>>>()?;
            (weighted, Some(a))
        } else {
            (rows, None)
        };
        let m = att_rnn.final_state(g, &inputs)?;
        let m = g.dropout(m, self.config.dropout, rng)?;
        Ok((m, a))
    }

    /// Pre-softmax activations of the two-layer head over o.
    pub fn head(&self, g: &mut Graph, o: TensorId) -> Result<TensorId> {
        let w1 = g.param(self.w_c1)?;
        let b1 = g.param(self.b_c1)?;
        let w2 = g.param(self.w_c2)?;
        let b2 = g.param(self.b_c2)?;
        let h = g.tape.matmul(o, w1)?;
        let h = g.tape.add_row(h, b1)?;
        let h = g.tape.sigmoid(h);
        let act = g.tape.matmul(h, w2)?;
        g.tape.add_row(act, b2)
    }

    /// Activations for one candidate span: the full per-candidate pipeline.
    /// `c` carries the detector's sentence features and is required exactly
    /// when the context branch is on.
    pub fn candidate_activations<R: Rng>(
        &self,
        g: &mut Graph,
        rng: &mut R,
        enc: &SentenceEncoding,
        c: Option<&[Vec<f64>]>,
        start: usize,
        end: usize,
    ) -> Result<TensorId> {
        let e = self.entity_encode(g, rng, enc, start, end)?;
        let o = if self.config.use_context {
            let c = c.ok_or_else(|| {
                Error::Contract("classifier configured with context but no features supplied".into())
            })?;
            let (m, _) = self.attend_context(g, rng, c, e)?;
            g.tape.concat(&[m, e], 1)?
        } else {
            e
        };
        self.head(g, o)
    }

    /// Hinge-ranking loss on pre-softmax activations: for each wrong label
    /// y_w, max(0, Δ + act_w − act_r), summed. Zero exactly when the right
    /// activation clears every wrong one by at least Δ.
    pub fn hinge_rank_loss(&self, g: &mut Graph, act: TensorId, gold: usize) -> Result<TensorId> {
        let n_classes = self.n_types + 1;
        if gold >= n_classes {
            return Err(Error::Contract(format!(
                "gold label index {gold} out of range for {n_classes} classes"
            )));
        }
        let act_r = g.tape.slice_cols(act, gold, gold + 1)?;
        let diff = g.tape.sub(act, act_r)?;
        let shifted = g.tape.add_const(diff, self.config.delta);
        let hinged = g.tape.relu(shifted);
        let mut mask = vec![1.0; n_classes];
        mask[gold] = 0.0;
        let mask = g.tape.constant(Tensor::row(mask));
        let wrong_only = g.tape.mul(hinged, mask)?;
        Ok(g.tape.sum_all(wrong_only))
    }

    /// Summed hinge loss over one sentence's training candidates
    /// (start, end, gold-class). Also reports the candidate count so the
    /// caller can normalize across a batch.
    pub fn sentence_loss<R: Rng>(
        &self,
        g: &mut Graph,
        rng: &mut R,
        sentence: &Sentence,
        provider: &ContextProvider,
        c: Option<&[Vec<f64>]>,
        candidates: &[(usize, usize, usize)],
    ) -> Result<(TensorId, usize)> {
        if candidates.is_empty() {
            return Err(Error::Contract(format!(
                "no training candidates for sentence {}",
                sentence.id
            )));
        }
        let enc = self.encode_sentence(g, rng, sentence, provider)?;
        let mut losses = Vec::with_capacity(candidates.len());
        for &(start, end, gold) in candidates {
            let act = self.candidate_activations(g, rng, &enc, c, start, end)?;
            losses.push(self.hinge_rank_loss(g, act, gold)?);
        }
        let total = g.tape.concat(&losses, 1)?;
        Ok((g.tape.sum_all(total), candidates.len()))
    }

    /// Classify spans of one sentence at inference: per span, the argmax
    /// class (which may be NONE) and its probability.
    pub fn classify_spans(
        &self,
        sentence: &Sentence,
        provider: &ContextProvider,
        c: Option<&[Vec<f64>]>,
        spans: &[(usize, usize)],
    ) -> Result<Vec<(usize, f64)>> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let enc = self.encode_sentence(&mut g, &mut rng, sentence, provider)?;
        let mut out = Vec::with_capacity(spans.len());
        for &(start, end) in spans {
            let act = self.candidate_activations(&mut g, &mut rng, &enc, c, start, end)?;
            let p = g.tape.softmax_rows(act)?;
            let pv = g.tape.value(p).values();
            let (best, best_p) = pv
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, &v)| (i, v))
                .unwrap();
            out.push((best, best_p));
        }
        Ok(out)
    }
}

/// Full two-stage prediction for one sentence: detect candidate spans, type
/// each one, and drop those classified as NONE. Flat-mode non-overlap is
/// preserved because dropping spans cannot introduce a conflict.
pub fn predict_entities(
    detector: &crate::detector::DetectorModel,
    classifier: &ClassifierModel,
    sentence: &Sentence,
    provider: &ContextProvider,
    mode: crate::detector::DetectMode,
) -> Result<Vec<EntityCandidate>> {
    let candidates = detector.detect(sentence, provider, mode)?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let c = if classifier.config.use_context {
        Some(detector.sentence_features(sentence, provider)?)
    } else {
        None
    };
    let spans: Vec<(usize, usize)> = candidates.iter().map(|p| p.span()).collect();
    let typed = classifier.classify_spans(sentence, provider, c.as_deref(), &spans)?;
    Ok(candidates
        .iter()
        .zip(typed)
        .filter(|(_, (label, _))| *label != classifier.none_index())
        .map(|(p, (label, p_type))| EntityCandidate {
            sentence_id: sentence.id,
            start: p.start,
            end: p.end,
            p_entity: p.p_entity.unwrap_or(f64::NAN),
            label: Some(label),
            p_type: Some(p_type),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::{SpanAnnotation, Token, Vocabulary};
    use crate::numeric::check::grad_check_params;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn tiny_vocabs(n_labels: usize) -> Vocabularies {
        let mut word = Vocabulary::with_reserved();
        let mut char_v = Vocabulary::with_reserved();
        let pos = Vocabulary::with_reserved();
        let mut label = Vocabulary::plain();
        for w in ["the", "cat", "sat", "on", "mat", "big"] {
            word.add(w);
            for c in w.chars() {
                char_v.add(&c.to_string());
            }
        }
        for i in 0..n_labels {
            label.add(&format!("T{i}"));
        }
        Vocabularies { word, char: char_v, pos, label }
    }

    fn tiny_config() -> ClassifierConfig {
        ClassifierConfig {
            word_dims: WordDims { d_w: 4, d_pos: 3, d_c: 2, d_cl: 2, use_pos: false },
            d_wl: 3,
            d_el: 3,
            d_ml: 3,
            d_h: 4,
            d_sl: 3,
            gamma_init: 1.0,
            dropout: 0.0,
            ctx_layers: 0,
            ctx_width: 0,
            use_context: true,
            use_attention: true,
            delta: 5.0,
        }
    }

    fn sentence(words: &[&str]) -> Sentence {
        Sentence {
            id: 0,
            tokens: words.iter().map(|w| Token::new(*w, None)).collect(),
            gold: vec![SpanAnnotation::new(0, 1, "T0")],
        }
    }

    fn tiny_model(seed: u64) -> ClassifierModel {
        ClassifierModel::init(tiny_vocabs(2), tiny_config(), &mut rng(seed)).unwrap()
    }

    fn features(n: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::Rng as _;
        let mut r = rng(seed);
        (0..n)
            .map(|_| (0..width).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn entity_representation_width_is_twice_the_entity_size() {
        let model = tiny_model(1);
        let s = sentence(&["the", "cat", "sat"]);
        let mut g = Graph::new(&model.params, false);
        let enc = model.encode_sentence(&mut g, &mut rng(0), &s, &ContextProvider::None).unwrap();
        let e = model.entity_encode(&mut g, &mut rng(0), &enc, 0, 1).unwrap();
        assert_eq!(g.tape.value(e).shape(), &[1, 6]);
        // single-token span runs both directions over one step
        let e1 = model.entity_encode(&mut g, &mut rng(0), &enc, 2, 2).unwrap();
        assert_eq!(g.tape.value(e1).shape(), &[1, 6]);
    }

    #[test]
    fn full_scale_widths() {
        // at 300 per direction, e is 600 wide and o = [m;e] is 1200 wide
        let mut cfg = tiny_config();
        cfg.d_wl = 300;
        cfg.d_el = 300;
        cfg.d_ml = 300;
        cfg.d_sl = 300;
        cfg.d_h = 50;
        let model = ClassifierModel::init(tiny_vocabs(4), cfg, &mut rng(2)).unwrap();
        let s = sentence(&["the", "cat"]);
        let mut g = Graph::new(&model.params, false);
        let enc = model.encode_sentence(&mut g, &mut rng(0), &s, &ContextProvider::None).unwrap();
        let e = model.entity_encode(&mut g, &mut rng(0), &enc, 0, 0).unwrap();
        assert_eq!(g.tape.value(e).shape(), &[1, 600]);
        assert_eq!(model.params.get(model.w_c1).tensor.shape(), &[1200, 50]);
        // 4 types + NONE
        assert_eq!(model.params.get(model.w_c2).tensor.shape(), &[50, 5]);
    }

    #[test]
    fn out_of_bounds_span_is_rejected() {
        let model = tiny_model(3);
        let s = sentence(&["the", "cat"]);
        let mut g = Graph::new(&model.params, false);
        let enc = model.encode_sentence(&mut g, &mut rng(0), &s, &ContextProvider::None).unwrap();
        assert!(model.entity_encode(&mut g, &mut rng(0), &enc, 1, 2).is_err());
        assert!(model.entity_encode(&mut g, &mut rng(0), &enc, 1, 0).is_err());
    }

    #[test]
    fn attention_is_a_distribution() {
        let model = tiny_model(4);
        let mut g = Graph::new(&model.params, false);
        let e = g.tape.constant(Tensor::row(vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2]));
        let c = features(5, 6, 10);
        let a = model.attention_distribution(&mut g, &c, e).unwrap();
        let av = g.tape.value(a).values();
        assert_eq!(av.len(), 5);
        assert!(av.iter().all(|&x| x >= 0.0));
        assert!((av.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn singleton_context_gets_all_the_attention() {
        let model = tiny_model(5);
        let mut g = Graph::new(&model.params, false);
        let e = g.tape.constant(Tensor::row(vec![1.0; 6]));
        let c = features(1, 6, 11);
        let a = model.attention_distribution(&mut g, &c, e).unwrap();
        assert!((g.tape.value(a).values()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_attention_matrix_gives_uniform_weights() {
        let mut model = tiny_model(6);
        for v in model.params.get_mut(model.w_att.unwrap()).tensor.values_mut() {
            *v = 0.0;
        }
        let mut g = Graph::new(&model.params, false);
        let e = g.tape.constant(Tensor::row(vec![1.0; 6]));
        let c = features(4, 6, 12);
        let a = model.attention_distribution(&mut g, &c, e).unwrap();
        for &w in g.tape.value(a).values() {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_a_positions_score_raises_its_weight() {
        // craft W and e so the score of position k is c_k's first component
        let mut model = tiny_model(7);
        {
            let w = model.params.get_mut(model.w_att.unwrap());
            for v in w.tensor.values_mut() {
                *v = 0.0;
            }
            w.tensor.values_mut()[0] = 1.0; // W[0][0]
        }
        let weight_of_first = |model: &ClassifierModel, first: f64| {
            let mut g = Graph::new(&model.params, false);
            let mut e_row = vec![0.0; 6];
            e_row[0] = 1.0; // scores = C·W·eᵀ = first components
            let e = g.tape.constant(Tensor::row(e_row));
            let mut c = features(3, 6, 13);
            c[0][0] = first;
            let a = model.attention_distribution(&mut g, &c, e).unwrap();
            g.tape.value(a).values()[0]
        };
        let lo = weight_of_first(&model, 0.5);
        let hi = weight_of_first(&model, 1.5);
        assert!(hi > lo);
    }

    #[test]
    fn permuting_context_permutes_the_distribution() {
        let model = tiny_model(8);
        let c = features(4, 6, 14);
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| c[i].clone()).collect();
        let e_row = vec![0.4, -0.1, 0.2, 0.7, -0.3, 0.6];
        let weights = |cs: &[Vec<f64>]| {
            let mut g = Graph::new(&model.params, false);
            let e = g.tape.constant(Tensor::row(e_row.clone()));
            let a = model.attention_distribution(&mut g, cs, e).unwrap();
            g.tape.value(a).values().to_vec()
        };
        let base = weights(&c);
        let after = weights(&permuted);
        for (j, &i) in perm.iter().enumerate() {
            assert!((after[j] - base[i]).abs() < 1e-12);
        }
        // the multiset of weighted context vectors is unchanged
        let mut set_a: Vec<Vec<i64>> = (0..4)
            .map(|k| c[k].iter().map(|v| ((v * base[k]) * 1e9).round() as i64).collect())
            .collect();
        let mut set_b: Vec<Vec<i64>> = (0..4)
            .map(|j| permuted[j].iter().map(|v| ((v * after[j]) * 1e9).round() as i64).collect())
            .collect();
        set_a.sort();
        set_b.sort();
        assert_eq!(set_a, set_b);
    }

    #[test]
    fn zero_head_weights_give_uniform_class_probabilities() {
        let mut model = tiny_model(9);
        for id in [model.w_c1, model.b_c1, model.w_c2, model.b_c2] {
            for v in model.params.get_mut(id).tensor.values_mut() {
                *v = 0.0;
            }
        }
        let s = sentence(&["the", "cat", "sat"]);
        let c = features(3, 6, 15);
        let out = model
            .classify_spans(&s, &ContextProvider::None, Some(&c), &[(0, 1), (2, 2)])
            .unwrap();
        // 2 types + NONE → 1/3 each; argmax ties resolve to the last max
        for (_, p) in out {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn class_probabilities_sum_to_one() {
        let model = tiny_model(10);
        let s = sentence(&["the", "cat", "sat", "on"]);
        let c = features(4, 6, 16);
        let mut g = Graph::new(&model.params, false);
        let enc = model.encode_sentence(&mut g, &mut rng(0), &s, &ContextProvider::None).unwrap();
        let act = model
            .candidate_activations(&mut g, &mut rng(0), &enc, Some(&c), 1, 2)
            .unwrap();
        let p = g.tape.softmax_rows(act).unwrap();
        let pv = g.tape.value(p).values();
        assert_eq!(pv.len(), 3);
        assert!((pv.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hinge_loss_closed_forms() {
        let model = tiny_model(11);
        let mut g = Graph::new(&model.params, false);
        // two classes with equal activations contribute one margin term of
        // Δ; the third class sits far below and contributes nothing
        let act3 = g.tape.constant(Tensor::row(vec![0.0, 0.0, -100.0]));
        let loss = model.hinge_rank_loss(&mut g, act3, 0).unwrap();
        assert!((g.tape.value(loss).values()[0] - 5.0).abs() < 1e-12);

        // margin satisfied everywhere → exactly zero
        let act_good = g.tape.constant(Tensor::row(vec![10.0, 0.0, 4.9]));
        let loss0 = model.hinge_rank_loss(&mut g, act_good, 0).unwrap();
        assert_eq!(g.tape.value(loss0).values()[0], 0.0);

        // margin barely violated by the third class
        let act_close = g.tape.constant(Tensor::row(vec![10.0, 0.0, 5.5]));
        let loss1 = model.hinge_rank_loss(&mut g, act_close, 0).unwrap();
        assert!((g.tape.value(loss1).values()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hinge_loss_rejects_out_of_range_gold() {
        let model = tiny_model(12);
        let mut g = Graph::new(&model.params, false);
        let act = g.tape.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
        assert!(model.hinge_rank_loss(&mut g, act, 3).is_err());
    }

    #[test]
    fn random_activations_with_a_large_margin_cost_something() {
        let model = tiny_model(13);
        let mut g = Graph::new(&model.params, false);
        // activations spread far less than Δ apart
        let act = g.tape.constant(Tensor::row(vec![0.3, -0.2, 0.4]));
        let loss = model.hinge_rank_loss(&mut g, act, 2).unwrap();
        assert!(g.tape.value(loss).values()[0] > 0.0);
    }

    #[test]
    fn ablated_configurations_drop_their_parameters() {
        let mut cfg = tiny_config();
        cfg.use_context = false;
        let no_ctx = ClassifierModel::init(tiny_vocabs(2), cfg, &mut rng(14)).unwrap();
        assert!(no_ctx.w_att.is_none());
        assert!(no_ctx.att_rnn.is_none());
        // head takes e alone
        assert_eq!(no_ctx.params.get(no_ctx.w_c1).tensor.rows(), 6);
        let s = sentence(&["the", "cat"]);
        let out = no_ctx.classify_spans(&s, &ContextProvider::None, None, &[(0, 1)]).unwrap();
        assert_eq!(out.len(), 1);

        let mut cfg = tiny_config();
        cfg.use_attention = false;
        let no_att = ClassifierModel::init(tiny_vocabs(2), cfg, &mut rng(15)).unwrap();
        assert!(no_att.w_att.is_none());
        assert!(no_att.att_rnn.is_some());
        let c = features(2, 6, 17);
        let out = no_att.classify_spans(&s, &ContextProvider::None, Some(&c), &[(0, 0)]).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn adopt_tables_copies_embeddings() {
        use crate::detector::{DetectorConfig, DetectorModel};
        let det = DetectorModel::init(
            tiny_vocabs(2),
            DetectorConfig {
                r: 3,
                word_dims: WordDims { d_w: 4, d_pos: 3, d_c: 2, d_cl: 2, use_pos: false },
                d_wl: 3,
                d_sl: 3,
                gamma_init: 1.0,
                dropout: 0.0,
                ctx_layers: 0,
                ctx_width: 0,
            },
            None,
            &mut rng(16),
        )
        .unwrap();
        let mut cls = tiny_model(17);
        let before = cls.params.get(cls.word.word_table).tensor.values().to_vec();
        cls.adopt_tables(&det.params, &det.word).unwrap();
        let after = cls.params.get(cls.word.word_table).tensor.values().to_vec();
        let det_vals = det.params.get(det.word.word_table).tensor.values();
        assert_ne!(before, after);
        assert_eq!(after, det_vals);
    }

    #[test]
    fn classifier_loss_gradient_matches_finite_differences() {
        let model = tiny_model(18);
        let s = sentence(&["the", "cat", "sat"]);
        let c = features(3, 6, 19);
        let candidates = vec![(0usize, 1usize, 0usize), (2, 2, 2), (0, 2, 1)];
        let loss_of = |m: &ClassifierModel| -> Result<f64> {
            let mut g = Graph::new(&m.params, false);
            let (loss, n) = m.sentence_loss(&mut g, &mut rng(0), &s, &ContextProvider::None, Some(&c), &candidates)?;
            let scaled = g.tape.scale(loss, 1.0 / n as f64);
            Ok(g.tape.value(scaled).values()[0])
        };
        // keep clear of hinge kinks: every margin term must sit away from 0
        let mut g = Graph::new(&model.params, false);
        let enc = model.encode_sentence(&mut g, &mut rng(0), &s, &ContextProvider::None).unwrap();
        for &(start, end, gold) in &candidates {
            let act = model
                .candidate_activations(&mut g, &mut rng(0), &enc, Some(&c), start, end)
                .unwrap();
            let av = g.tape.value(act).values().to_vec();
            for (w, &a) in av.iter().enumerate() {
                if w != gold {
                    let margin = model.config.delta + a - av[gold];
                    assert!(margin.abs() > 1e-4, "margin too close to a kink: {margin}");
                }
            }
        }

        let mut g = Graph::new(&model.params, false);
        let (loss, n) = model
            .sentence_loss(&mut g, &mut rng(0), &s, &ContextProvider::None, Some(&c), &candidates)
            .unwrap();
        let scaled = g.tape.scale(loss, 1.0 / n as f64);
        g.tape.backward(scaled).unwrap();
        let mut grads = model.params.zero_grads();
        g.collect_grads_into(&mut grads).unwrap();
        let mut f = |ps: &ParamSet| {
            let m = ClassifierModel {
                params: ps.clone(),
                vocabs: model.vocabs.clone(),
                word: model.word.clone(),
                word_rnn: model.word_rnn,
                mix: model.mix,
                entity_rnn: model.entity_rnn,
                w_att: model.w_att,
                att_rnn: model.att_rnn,
                w_c1: model.w_c1,
                b_c1: model.b_c1,
                w_c2: model.w_c2,
                b_c2: model.b_c2,
                config: model.config.clone(),
                n_types: model.n_types,
            };
            loss_of(&m)
        };
        let (worst, name) = grad_check_params(&model.params, &grads, 5, 1e-5, &mut f).unwrap();
        assert!(worst < 1e-3, "worst {worst} in {name}");
    }

    #[test]
    fn empty_candidate_list_is_a_contract_error() {
        let model = tiny_model(20);
        let s = sentence(&["the", "cat"]);
        let mut g = Graph::new(&model.params, false);
        let err = model
            .sentence_loss(&mut g, &mut rng(0), &s, &ContextProvider::None, Some(&features(2, 6, 21)), &[])
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
