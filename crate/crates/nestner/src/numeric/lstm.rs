//! LSTM cell built from tape operations.
//!
//! Gate weights use the fused layout `w_ih: [d_in × 4H]`, `w_hh: [H × 4H]`,
//! `b: [1 × 4H]` with gate order input, forget, cell, output. The forget-gate
//! bias slice starts at 1.0 so early training does not erase cell state.
//! Weights initialize uniform in ±1/√H.

use rand::Rng;

use crate::error::Result;
use crate::numeric::params::{Graph, ParamId, ParamSet};
use crate::numeric::tape::TensorId;
use crate::numeric::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl LstmParams {
    /// Register a cell's parameters under `prefix.{w_ih,w_hh,b}`.
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (d_h as f64).sqrt();
        let w_ih = ps.add(
            &format!("{prefix}.w_ih"),
            Tensor::rand_uniform(d_in, 4 * d_h, -bound, bound, rng),
            true,
        )?;
        let w_hh = ps.add(
            &format!("{prefix}.w_hh"),
            Tensor::rand_uniform(d_h, 4 * d_h, -bound, bound, rng),
            true,
        )?;
        let mut bias = vec![0.0; 4 * d_h];
        for v in &mut bias[d_h..2 * d_h] {
            *v = 1.0;
        }
        let b = ps.add(&format!("{prefix}.b"), Tensor::new(vec![1, 4 * d_h], bias)?, true)?;
        Ok(LstmParams { w_ih, w_hh, b, d_in, d_h })
    }

    /// Look up an already-registered cell by its prefix.
    pub fn lookup(ps: &ParamSet, prefix: &str) -> Option<Self> {
        let w_ih = ps.by_name(&format!("{prefix}.w_ih"))?;
        let w_hh = ps.by_name(&format!("{prefix}.w_hh"))?;
        let b = ps.by_name(&format!("{prefix}.b"))?;
        let (d_in, four_h) = ps.get(w_ih).tensor.dims2();
        Some(LstmParams { w_ih, w_hh, b, d_in, d_h: four_h / 4 })
    }
}

/// Hidden and cell state carried between steps, each `1×H` on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: TensorId,
    pub c: TensorId,
}

pub struct LstmCell {
    pub params: LstmParams,
    w_ih: TensorId,
    w_hh: TensorId,
    b: TensorId,
}

impl LstmCell {
    /// Bind the cell's parameters onto the graph's tape.
    pub fn bind(g: &mut Graph, params: LstmParams) -> Result<Self> {
        Ok(LstmCell {
            params,
            w_ih: g.param(params.w_ih)?,
            w_hh: g.param(params.w_hh)?,
            b: g.param(params.b)?,
        })
    }

    /// Zero initial state.
    pub fn zero_state(&self, g: &mut Graph) -> LstmState {
        let h = g.tape.constant(Tensor::zeros(1, self.params.d_h));
        let c = g.tape.constant(Tensor::zeros(1, self.params.d_h));
        LstmState { h, c }
    }

    /// One step: `x` is `1×d_in`, returns the next state.
    pub fn step(&self, g: &mut Graph, x: TensorId, state: LstmState) -> Result<LstmState> {
        let d_h = self.params.d_h;
        let xi = g.tape.matmul(x, self.w_ih)?;
        let hi = g.tape.matmul(state.h, self.w_hh)?;
        let pre0 = g.tape.add(xi, hi)?;
        let pre = g.tape.add_row(pre0, self.b)?;

        let zi = g.tape.slice_cols(pre, 0, d_h)?;
        let zf = g.tape.slice_cols(pre, d_h, 2 * d_h)?;
        let zg = g.tape.slice_cols(pre, 2 * d_h, 3 * d_h)?;
        let zo = g.tape.slice_cols(pre, 3 * d_h, 4 * d_h)?;

        let i = g.tape.sigmoid(zi);
        let f = g.tape.sigmoid(zf);
        let gc = g.tape.tanh(zg);
        let o = g.tape.sigmoid(zo);

        let fc = g.tape.mul(f, state.c)?;
        let ig = g.tape.mul(i, gc)?;
        let c = g.tape.add(fc, ig)?;
        let ct = g.tape.tanh(c);
        let h = g.tape.mul(o, ct)?;
        Ok(LstmState { h, c })
    }

    /// Run over a sequence of `1×d_in` rows, returning each step's hidden
    /// state. `reverse` feeds the sequence backward but reports outputs in
    /// input order, so `out[t]` always describes token `t`.
    pub fn run(
        &self,
        g: &mut Graph,
        inputs: &[TensorId],
        reverse: bool,
    ) -> Result<Vec<TensorId>> {
        let mut state = self.zero_state(g);
        let mut out = vec![None; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            state = self.step(g, inputs[t], state)?;
            out[t] = Some(state.h);
        }
        Ok(out.into_iter().map(|o| o.unwrap()).collect())
    }
}

/// Bidirectional pass: forward and backward cells run independently and
/// their hidden states concatenate per position to `1×2H` rows.
#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstm {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BiLstm {
            fwd: LstmParams::init(ps, &format!("{prefix}.fwd"), d_in, d_h, rng)?,
            bwd: LstmParams::init(ps, &format!("{prefix}.bwd"), d_in, d_h, rng)?,
        })
    }

    pub fn lookup(ps: &ParamSet, prefix: &str) -> Option<Self> {
        Some(BiLstm {
            fwd: LstmParams::lookup(ps, &format!("{prefix}.fwd"))?,
            bwd: LstmParams::lookup(ps, &format!("{prefix}.bwd"))?,
        })
    }

    pub fn run(&self, g: &mut Graph, inputs: &[TensorId]) -> Result<Vec<TensorId>> {
        let fwd = LstmCell::bind(g, self.fwd)?;
        let bwd = LstmCell::bind(g, self.bwd)?;
        let hf = fwd.run(g, inputs, false)?;
        let hb = bwd.run(g, inputs, true)?;
        hf.iter()
            .zip(&hb)
            .map(|(&f, &b)| g.tape.concat(&[f, b], 1))
            .collect()
    }

    /// Final states of both directions concatenated: `[h_fwd(last); h_bwd(first)]`.
    pub fn final_state(&self, g: &mut Graph, inputs: &[TensorId]) -> Result<TensorId> {
        let fwd = LstmCell::bind(g, self.fwd)?;
        let bwd = LstmCell::bind(g, self.bwd)?;
        let hf = fwd.run(g, inputs, false)?;
        let hb = bwd.run(g, inputs, true)?;
        g.tape.concat(&[*hf.last().unwrap(), hb[0]], 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_weights_give_zero_hidden_state() {
        // with all-zero w/b: i=f=o=σ(0)=0.5, g=tanh(0)=0, c=0.5·0+0.5·0=0,
        // h=0.5·tanh(0)=0
        let mut ps = ParamSet::new();
        let lp = LstmParams::init(&mut ps, "z", 3, 4, &mut rng(1)).unwrap();
        for id in ps.ids().collect::<Vec<_>>() {
            let p = ps.get_mut(id);
            for v in p.tensor.values_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new(&ps, false);
        let cell = LstmCell::bind(&mut g, lp).unwrap();
        let x = g.tape.leaf(Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap());
        let s0 = cell.zero_state(&mut g);
        let s1 = cell.step(&mut g, x, s0).unwrap();
        for &v in g.tape.value(s1.h).values() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn hidden_state_stays_bounded() {
        // |h| ≤ 1 elementwise because h = σ(·)·tanh(·)
        let mut ps = ParamSet::new();
        let lp = LstmParams::init(&mut ps, "b", 2, 5, &mut rng(2)).unwrap();
        let mut g = Graph::new(&ps, false);
        let cell = LstmCell::bind(&mut g, lp).unwrap();
        let mut state = cell.zero_state(&mut g);
        let mut r = rng(3);
        for _ in 0..50 {
            let x = g
                .tape
                .leaf(Tensor::rand_uniform(1, 2, -10.0, 10.0, &mut r));
            state = cell.step(&mut g, x, state).unwrap();
            for &v in g.tape.value(state.h).values() {
                assert!(v.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut ps = ParamSet::new();
        let lp = LstmParams::init(&mut ps, "fb", 2, 3, &mut rng(4)).unwrap();
        let b = ps.get(lp.b).tensor.values();
        assert_eq!(&b[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&b[3..6], &[1.0, 1.0, 1.0]);
        assert_eq!(&b[6..12], &[0.0; 6]);
    }

    #[test]
    fn init_bound_followed() {
        let mut ps = ParamSet::new();
        let lp = LstmParams::init(&mut ps, "ib", 4, 16, &mut rng(5)).unwrap();
        let bound = 1.0 / 4.0;
        for &v in ps.get(lp.w_ih).tensor.values() {
            assert!(v.abs() <= bound);
        }
        for &v in ps.get(lp.w_hh).tensor.values() {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn reverse_run_reports_outputs_in_input_order() {
        // On a palindromic input sequence, the reversed pass at position t
        // must equal the forward pass at position len-1-t.
        let mut ps = ParamSet::new();
        let lp = LstmParams::init(&mut ps, "r", 2, 3, &mut rng(6)).unwrap();
        let mut g = Graph::new(&ps, false);
        let cell = LstmCell::bind(&mut g, lp).unwrap();
        let rows = [vec![1.0, 2.0], vec![-0.5, 0.25], vec![1.0, 2.0]];
        let xs: Vec<TensorId> = rows
            .iter()
            .map(|r| g.tape.leaf(Tensor::from_rows(std::slice::from_ref(r)).unwrap()))
            .collect();
        let fwd = cell.run(&mut g, &xs, false).unwrap();
        let bwd = cell.run(&mut g, &xs, true).unwrap();
        // palindrome: reading forward equals reading backward, so the state
        // after consuming k tokens matches across directions
        for t in 0..3 {
            let f = g.tape.value(fwd[t]).values().to_vec();
            let b = g.tape.value(bwd[2 - t]).values().to_vec();
            for (x, y) in f.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilstm_output_width_is_2h() {
        let mut ps = ParamSet::new();
        let bi = BiLstm::init(&mut ps, "bi", 3, 4, &mut rng(7)).unwrap();
        let mut g = Graph::new(&ps, false);
        let xs: Vec<TensorId> = (0..5)
            .map(|_| g.tape.leaf(Tensor::rand_uniform(1, 3, -1.0, 1.0, &mut rng(8))))
            .collect();
        let hs = bi.run(&mut g, &xs).unwrap();
        assert_eq!(hs.len(), 5);
        for h in hs {
            assert_eq!(g.tape.value(h).dims2(), (1, 8));
        }
        let fin = bi.final_state(&mut g, &xs).unwrap();
        assert_eq!(g.tape.value(fin).dims2(), (1, 8));
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let mut ps = ParamSet::new();
        let lp = LstmParams::init(&mut ps, "fd", 2, 3, &mut rng(9)).unwrap();
        let x_vals = vec![0.3, -0.7];

        let loss_at = |ps: &ParamSet| -> f64 {
            let mut g = Graph::new(ps, false);
            let cell = LstmCell::bind(&mut g, lp).unwrap();
            let x = g
                .tape
                .leaf(Tensor::from_rows(std::slice::from_ref(&x_vals)).unwrap());
            let s0 = cell.zero_state(&mut g);
            let s1 = cell.step(&mut g, x, s0).unwrap();
            let s2 = cell.step(&mut g, x, s1).unwrap();
            let l = g.tape.sum_all(s2.h);
            g.tape.value(l).values()[0]
        };

        // analytic gradient
        let mut g = Graph::new(&ps, false);
        let cell = LstmCell::bind(&mut g, lp).unwrap();
        let x = g.tape.leaf(Tensor::from_rows(std::slice::from_ref(&x_vals)).unwrap());
        let s0 = cell.zero_state(&mut g);
        let s1 = cell.step(&mut g, x, s0).unwrap();
        let s2 = cell.step(&mut g, x, s1).unwrap();
        let l = g.tape.sum_all(s2.h);
        g.tape.backward(l).unwrap();
        let mut grads = ps.zero_grads();
        g.collect_grads_into(&mut grads).unwrap();

        // numeric check on a scatter of coordinates of each parameter
        let h = 1e-6;
        for (pi, pid) in [(0usize, lp.w_ih), (1, lp.w_hh), (2, lp.b)] {
            let numel = ps.get(pid).tensor.numel();
            for ci in [0, numel / 2, numel - 1] {
                let mut ps_plus = ps.clone();
                ps_plus.get_mut(pid).tensor.values_mut()[ci] += h;
                let mut ps_minus = ps.clone();
                ps_minus.get_mut(pid).tensor.values_mut()[ci] -= h;
                let numeric = (loss_at(&ps_plus) - loss_at(&ps_minus)) / (2.0 * h);
                let analytic = grads[pi][ci];
                assert!(
                    (numeric - analytic).abs() < 1e-4,
                    "param {pi} coord {ci}: numeric {numeric} vs analytic {analytic}"
                );
            }
        }
    }
}
