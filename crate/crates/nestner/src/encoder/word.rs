//! Word Processor: per-token representation x_k = [w_k; p_k; c_k].
//!
//! w_k is the word-embedding row, p_k the POS-embedding row (only when the
//! model is configured with POS features), and c_k the concatenated final
//! states of a character-level bidirectional LSTM run over the token's
//! characters.

use rand::Rng;

use crate::corpus::types::{Sentence, Token, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::numeric::lstm::BiLstm;
use crate::numeric::params::{Graph, ParamId, ParamSet};
use crate::numeric::tape::TensorId;
use crate::numeric::tensor::Tensor;

/// Random-init range for embedding rows, matching the fallback range used
/// for words missing from a pretrained vector file.
const EMBED_INIT: f64 = 0.25;

fn init_table<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let mut t = Tensor::rand_uniform(rows, cols, -EMBED_INIT, EMBED_INIT, rng);
    // padding row stays zero
    for v in &mut t.values_mut()[PAD * cols..(PAD + 1) * cols] {
        *v = 0.0;
    }
    t
}

#[derive(Debug, Clone)]
pub struct WordProcessor {
    pub word_table: ParamId,
    pub pos_table: Option<ParamId>,
    pub char_table: ParamId,
    pub char_rnn: BiLstm,
    pub d_w: usize,
    pub d_pos: usize,
    pub d_c: usize,
    pub d_cl: usize,
}

impl WordProcessor {
    /// Register all word-level parameters under `prefix`. `pretrained`
    /// replaces the random word table when given; `use_pos` controls whether
    /// a POS table exists at all.
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        prefix: &str,
        word_vocab: &Vocabulary,
        pos_vocab: &Vocabulary,
        char_vocab: &Vocabulary,
        dims: WordDims,
        pretrained: Option<&Tensor>,
        rng: &mut R,
    ) -> Result<Self> {
        let word_tensor = match pretrained {
            Some(t) => {
                if t.rows() != word_vocab.len() || t.cols() != dims.d_w {
                    return Err(Error::Config(format!(
                        "pretrained table is {}×{}, expected {}×{}",
                        t.rows(),
                        t.cols(),
                        word_vocab.len(),
                        dims.d_w
                    )));
                }
                t.clone()
            }
            None => init_table(word_vocab.len(), dims.d_w, rng),
        };
        let word_table = ps.add(&format!("{prefix}.word_table"), word_tensor, true)?;
        let pos_table = if dims.use_pos {
            Some(ps.add(
                &format!("{prefix}.pos_table"),
                init_table(pos_vocab.len(), dims.d_pos, rng),
                true,
            )?)
        } else {
            None
        };
        let char_table = ps.add(
            &format!("{prefix}.char_table"),
            init_table(char_vocab.len(), dims.d_c, rng),
            true,
        )?;
        let char_rnn = BiLstm::init(ps, &format!("{prefix}.char_rnn"), dims.d_c, dims.d_cl, rng)?;
        Ok(WordProcessor {
            word_table,
            pos_table,
            char_table,
            char_rnn,
            d_w: dims.d_w,
            d_pos: dims.d_pos,
            d_c: dims.d_c,
            d_cl: dims.d_cl,
        })
    }

    /// Width of each x_k row.
    pub fn width(&self) -> usize {
        self.d_w + if self.pos_table.is_some() { self.d_pos } else { 0 } + 2 * self.d_cl
    }

    /// Per-token representations for one sentence, each `1×width()`.
    pub fn word_repr(
        &self,
        g: &mut Graph,
        word_vocab: &Vocabulary,
        pos_vocab: &Vocabulary,
        char_vocab: &Vocabulary,
        sentence: &Sentence,
    ) -> Result<Vec<TensorId>> {
        let n = sentence.len();
        let word_ids: Vec<usize> = sentence
            .tokens
            .iter()
            .map(|t| word_vocab.id_or_unk(&t.surface))
            .collect();
        let words = g.embed_rows(self.word_table, &word_ids)?;

        let pos_rows = match self.pos_table {
            Some(table) => {
                let mut ids = Vec::with_capacity(n);
                for t in &sentence.tokens {
                    match &t.pos {
                        Some(p) => ids.push(pos_vocab.id_or_unk(p)),
                        None => {
                            return Err(Error::Config(format!(
                                "model uses POS features but token {:?} in sentence {} has no POS tag",
                                t.surface, sentence.id
                            )));
                        }
                    }
                }
                Some(g.embed_rows(table, &ids)?)
            }
            None => None,
        };

        let mut out = Vec::with_capacity(n);
        for (k, token) in sentence.tokens.iter().enumerate() {
            let w = g.tape.gather_rows(words, &[k])?;
            let c = self.char_state(g, char_vocab, token)?;
            let x = match pos_rows {
                Some(pr) => {
                    let p = g.tape.gather_rows(pr, &[k])?;
                    g.tape.concat(&[w, p, c], 1)?
                }
                None => g.tape.concat(&[w, c], 1)?,
            };
            out.push(x);
        }
        Ok(out)
    }

    /// Character feature c_k: run the character recurrence over the token
    /// and concatenate both directions' final states.
    fn char_state(
        &self,
        g: &mut Graph,
        char_vocab: &Vocabulary,
        token: &Token,
    ) -> Result<TensorId> {
        let ids: Vec<usize> = if token.char_ids.is_empty() {
            token
                .surface
                .chars()
                .map(|c| char_vocab.id_or_unk(&c.to_string()))
                .collect()
        } else {
            token.char_ids.clone()
        };
        if ids.is_empty() {
            return Err(Error::Contract("token with empty surface".into()));
        }
        let table = g.embed_rows(self.char_table, &ids)?;
        let rows: Vec<TensorId> = (0..ids.len())
            .map(|i| g.tape.gather_rows(table, &[i]))
            .collect::<Result<_>>()?;
        self.char_rnn.final_state(g, &rows)
    }
}

/// Dimension bundle for [`WordProcessor::init`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct WordDims {
    pub d_w: usize,
    pub d_pos: usize,
    pub d_c: usize,
    pub d_cl: usize,
    pub use_pos: bool,
}
