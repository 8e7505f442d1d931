//! Gradient verification via central finite differences.
//!
//! The relative error for one coordinate is
//! `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`,
//! so tiny gradients compare against an absolute floor instead of blowing up.

use crate::error::Result;
use crate::numeric::params::{ParamId, ParamSet};

/// Largest per-coordinate relative error between `analytic` and a central
/// finite difference of `loss` with step `step`.
///
/// `loss` maps parameter values to a scalar; it is called twice per checked
/// coordinate. `coords` limits the check to chosen coordinates (all if empty).
pub fn grad_check_param(
    ps: &ParamSet,
    id: ParamId,
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    loss: &mut dyn FnMut(&ParamSet) -> Result<f64>,
) -> Result<f64> {
    let numel = ps.get(id).tensor.numel();
    let all: Vec<usize>;
    let coords = if coords.is_empty() {
        all = (0..numel).collect();
        &all
    } else {
        coords
    };
    let mut worst = 0.0f64;
    for &ci in coords {
        let mut plus = ps.clone();
        plus.get_mut(id).tensor.values_mut()[ci] += step;
        let mut minus = ps.clone();
        minus.get_mut(id).tensor.values_mut()[ci] -= step;
        let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
        let a = analytic[ci];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// Check every trainable parameter of `ps` against finite differences,
/// sampling up to `max_coords_per_param` coordinates of each, preferring
/// those with the largest claimed gradient. Coordinates whose gradient is
/// far below the loss's floating-point noise floor cannot be measured by
/// finite differences at all, so probing where the gradient is largest
/// keeps the comparison meaningful; an all-zero claimed gradient is still
/// probed at one coordinate to catch gradients that wrongly vanish.
/// Returns the worst relative error and the name of the parameter it
/// occurred in.
pub fn grad_check_params(
    ps: &ParamSet,
    grads: &[Vec<f64>],
    max_coords_per_param: usize,
    step: f64,
    loss: &mut dyn FnMut(&ParamSet) -> Result<f64>,
) -> Result<(f64, String)> {
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for id in ps.trainable_ids() {
        let numel = ps.get(id).tensor.numel();
        let coords: Vec<usize> = if numel <= max_coords_per_param {
            (0..numel).collect()
        } else {
            let mut order: Vec<usize> = (0..numel).collect();
            order.sort_by(|&a, &b| {
                grads[id.0][b]
                    .abs()
                    .partial_cmp(&grads[id.0][a].abs())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order.truncate(max_coords_per_param);
            order
        };
        let rel = grad_check_param(ps, id, &grads[id.0], &coords, step, loss)?;
        if rel > worst {
            worst = rel;
            worst_name = ps.get(id).name.clone();
        }
    }
    Ok((worst, worst_name))
}
