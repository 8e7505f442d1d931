//! Adaptive-moment parameter updates with bias correction.

use crate::error::{Error, Result};
use crate::numeric::params::ParamSet;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments mirroring every parameter's shape.
    pub fn new(ps: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = ps.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update over every trainable parameter. A non-finite gradient
    /// anywhere aborts before any state is touched, naming the parameter.
    pub fn step(&mut self, ps: &mut ParamSet, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        for id in ps.trainable_ids() {
            if grads[id.0].iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGrad(ps.get(id).name.clone()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in ps.trainable_ids() {
            let g = &grads[id.0];
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let values = ps.get_mut(id).tensor.values_mut();
            for i in 0..values.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients down so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|g| g * g).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}
