//! Sentence Processor: word-level recurrence, optional contextual
//! concatenation, and the final sentence recurrence producing f_k.
//!
//! Per token: run a bidirectional LSTM over the x sequence and concatenate
//! directions; append the mixed language-model vector when the model uses
//! one; run a second bidirectional LSTM over the result. f_k is that second
//! recurrence's per-position output, width 2·D_sl.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::lstm::BiLstm;
use crate::numeric::params::{Graph, ParamSet};
use crate::numeric::tape::TensorId;

#[derive(Debug, Clone)]
pub struct SentenceProcessor {
    pub word_rnn: BiLstm,
    pub sent_rnn: BiLstm,
    pub d_wl: usize,
    pub d_sl: usize,
    /// Width of the per-token context vector appended between the two
    /// recurrences; 0 when the model has no context provider.
    pub ctx_width: usize,
}

impl SentenceProcessor {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        prefix: &str,
        d_x: usize,
        d_wl: usize,
        d_sl: usize,
        ctx_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let word_rnn = BiLstm::init(ps, &format!("{prefix}.word_rnn"), d_x, d_wl, rng)?;
        let sent_rnn = BiLstm::init(
            ps,
            &format!("{prefix}.sent_rnn"),
            2 * d_wl + ctx_width,
            d_sl,
            rng,
        )?;
        Ok(SentenceProcessor {
            word_rnn,
            sent_rnn,
            d_wl,
            d_sl,
            ctx_width,
        })
    }

    /// Width of each f_k row.
    pub fn f_width(&self) -> usize {
        2 * self.d_sl
    }

    /// Encode one sentence's x rows (and per-token context vectors when the
    /// model expects them) into f rows.
    pub fn sentence_encode(
        &self,
        g: &mut Graph,
        xs: &[TensorId],
        ctx: Option<&[TensorId]>,
    ) -> Result<Vec<TensorId>> {
        match ctx {
            Some(c) => {
                if self.ctx_width == 0 {
                    return Err(Error::Contract(
                        "context vectors supplied to a model configured without context".into(),
                    ));
                }
                if c.len() != xs.len() {
                    return Err(Error::Contract(format!(
                        "{} tokens but {} context vectors",
                        xs.len(),
                        c.len()
                    )));
                }
            }
            None => {
                if self.ctx_width != 0 {
                    return Err(Error::Contract(
                        "model configured with context but none supplied".into(),
                    ));
                }
            }
        }
        let h = self.word_rnn.run(g, xs)?;
        let h = match ctx {
            Some(c) => h
                .iter()
                .zip(c)
                .map(|(&hk, &ck)| g.tape.concat(&[hk, ck], 1))
                .collect::<Result<Vec<_>>>()?,
            None => h,
        };
        self.sent_rnn.run(g, &h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_rows(g: &mut Graph, n: usize, d: usize, seed: u64) -> Vec<TensorId> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| g.tape.leaf(Tensor::rand_uniform(1, d, -1.0, 1.0, &mut r)))
            .collect()
    }

    #[test]
    fn f_width_is_twice_sentence_hidden() {
        let mut ps = ParamSet::new();
        let sp = SentenceProcessor::init(&mut ps, "sp", 5, 3, 4, 0, &mut rng(1)).unwrap();
        assert_eq!(sp.f_width(), 8);
        let mut g = Graph::new(&ps, false);
        let xs = random_rows(&mut g, 4, 5, 2);
        let fs = sp.sentence_encode(&mut g, &xs, None).unwrap();
        assert_eq!(fs.len(), 4);
        for f in fs {
            assert_eq!(g.tape.value(f).dims2(), (1, 8));
        }
    }

    #[test]
    fn full_scale_f_width() {
        // word and sentence hidden sizes 300 per direction → f width 600
        let mut ps = ParamSet::new();
        let sp = SentenceProcessor::init(&mut ps, "sp", 10, 300, 300, 0, &mut rng(3)).unwrap();
        assert_eq!(sp.f_width(), 600);
    }

    #[test]
    fn context_rows_change_the_encoding() {
        let mut ps = ParamSet::new();
        let sp = SentenceProcessor::init(&mut ps, "sp", 4, 3, 3, 2, &mut rng(4)).unwrap();
        let mut g = Graph::new(&ps, false);
        let xs = random_rows(&mut g, 3, 4, 5);
        let ctx_a = random_rows(&mut g, 3, 2, 6);
        let ctx_b = random_rows(&mut g, 3, 2, 7);
        let fa = sp.sentence_encode(&mut g, &xs, Some(&ctx_a)).unwrap();
        let fb = sp.sentence_encode(&mut g, &xs, Some(&ctx_b)).unwrap();
        let va = g.tape.value(fa[0]).values();
        let vb = g.tape.value(fb[0]).values();
        assert_ne!(va, vb);
    }

    #[test]
    fn context_arity_mismatches_are_rejected() {
        let mut ps = ParamSet::new();
        let with_ctx = SentenceProcessor::init(&mut ps, "a", 4, 3, 3, 2, &mut rng(8)).unwrap();
        let no_ctx = SentenceProcessor::init(&mut ps, "b", 4, 3, 3, 0, &mut rng(8)).unwrap();
        let mut g = Graph::new(&ps, false);
        let xs = random_rows(&mut g, 3, 4, 9);
        let ctx = random_rows(&mut g, 2, 2, 10); // wrong token count
        assert!(with_ctx.sentence_encode(&mut g, &xs, Some(&ctx)).is_err());
        assert!(with_ctx.sentence_encode(&mut g, &xs, None).is_err());
        let ctx3 = random_rows(&mut g, 3, 2, 11);
        assert!(no_ctx.sentence_encode(&mut g, &xs, Some(&ctx3)).is_err());
    }

    #[test]
    fn reversal_with_swapped_directions_reverses_the_word_recurrence() {
        // Run the word-level recurrence on x and on reverse(x) with the
        // direction parameters swapped; position t of one must equal
        // position n-1-t of the other with its halves swapped.
        let mut ps = ParamSet::new();
        let bi = BiLstm::init(&mut ps, "bi", 3, 2, &mut rng(12)).unwrap();
        let swapped = BiLstm { fwd: bi.bwd, bwd: bi.fwd };
        let mut g = Graph::new(&ps, false);
        let xs = random_rows(&mut g, 5, 3, 13);
        let rev: Vec<TensorId> = xs.iter().rev().copied().collect();
        let h = bi.run(&mut g, &xs).unwrap();
        let h_rev = swapped.run(&mut g, &rev).unwrap();
        let d = 2;
        for t in 0..5 {
            let a = g.tape.value(h[t]).values().to_vec();
            let b = g.tape.value(h_rev[4 - t]).values().to_vec();
            // b's layout is [old-bwd state; old-fwd state]
            for j in 0..d {
                assert!((a[j] - b[d + j]).abs() < 1e-12, "fwd half, t={t}");
                assert!((a[d + j] - b[j]).abs() < 1e-12, "bwd half, t={t}");
            }
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut ps = ParamSet::new();
        let sp = SentenceProcessor::init(&mut ps, "sp", 4, 3, 3, 0, &mut rng(14)).unwrap();
        let run = |ps: &ParamSet| {
            let mut g = Graph::new(ps, false);
            let xs = random_rows(&mut g, 4, 4, 15);
            let fs = sp.sentence_encode(&mut g, &xs, None).unwrap();
            fs.iter()
                .flat_map(|&f| g.tape.value(f).values().to_vec())
                .collect::<Vec<f64>>()
        };
        assert_eq!(run(&ps), run(&ps));
    }
}
