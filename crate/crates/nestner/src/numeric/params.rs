//! Named parameter storage and the binding context that connects parameters
//! to a tape for one forward/backward pass.
//!
//! `ParamSet` owns the master copy of every weight. A `Graph` wraps a fresh
//! `Tape` per pass; `param` binds a parameter onto the tape once (cached on
//! repeat bindings), and `embed_rows` binds individual embedding-table rows
//! so a lookup never copies the full table. After `backward`,
//! `collect_grads_into` folds tape gradients back into dense per-parameter
//! gradient buffers, scatter-adding row lookups.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::tape::{Tape, TensorId};
use crate::numeric::tensor::Tensor;

/// Index into a [`ParamSet`]. Stable for the life of the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered, name-addressable collection of model parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name: {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id.0);
        self.params.push(Param {
            name: name.to_string(),
            tensor,
            trainable,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    /// Parameters in insertion order; the order is part of the public
    /// contract (checkpoints and the optimizer rely on it).
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.trainable)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Zero-filled gradient buffers, one per parameter, aligned by index.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect()
    }
}

/// Where a parameter landed on the current tape.
enum Binding {
    Whole(TensorId),
    /// One tape leaf per lookup, each covering `rows` of the table.
    Rows(Vec<(TensorId, Vec<usize>)>),
}

/// One forward/backward pass: a tape plus the parameter bindings made on it.
pub struct Graph<'a> {
    pub tape: Tape,
    params: &'a ParamSet,
    bound: HashMap<usize, Binding>,
    /// Training mode enables dropout; inference mode makes it the identity.
    pub training: bool,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamSet, training: bool) -> Self {
        Graph {
            tape: Tape::new(),
            params,
            bound: HashMap::new(),
            training,
        }
    }

    /// Bind a whole parameter onto the tape (cached per graph).
    pub fn param(&mut self, id: ParamId) -> Result<TensorId> {
        if let Some(Binding::Whole(t)) = self.bound.get(&id.0) {
            return Ok(*t);
        }
        if self.bound.contains_key(&id.0) {
            return Err(Error::Contract(format!(
                "parameter {:?} already bound as embedding rows",
                self.params.get(id).name
            )));
        }
        let p = self.params.get(id);
        let mut t = p.tensor.clone();
        t.requires_grad = p.trainable;
        let tid = self.tape.leaf(t);
        self.bound.insert(id.0, Binding::Whole(tid));
        Ok(tid)
    }

    /// Bind selected rows of an embedding table as a standalone leaf.
    /// Gradients scatter-add back into the full table in `collect_grads_into`.
    pub fn embed_rows(&mut self, id: ParamId, rows: &[usize]) -> Result<TensorId> {
        if let Some(Binding::Whole(_)) = self.bound.get(&id.0) {
            return Err(Error::Contract(format!(
                "parameter {:?} already bound whole",
                self.params.get(id).name
            )));
        }
        let p = self.params.get(id);
        let (n_rows, cols) = p.tensor.dims2();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::Contract(format!(
                "embedding row {bad} out of range for {:?} with {n_rows} rows",
                p.name
            )));
        }
        let mut values = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            values.extend_from_slice(p.tensor.row_slice(r));
        }
        let mut t = Tensor::new(vec![rows.len(), cols], values)?;
        t.requires_grad = p.trainable;
        let tid = self.tape.leaf(t);
        match self.bound.entry(id.0).or_insert_with(|| Binding::Rows(Vec::new())) {
            Binding::Rows(list) => list.push((tid, rows.to_vec())),
            Binding::Whole(_) => unreachable!(),
        }
        Ok(tid)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by 1/(1-rate); in
    /// inference mode the input passes through untouched.
    pub fn dropout<R: Rng>(&mut self, x: TensorId, rate: f64, rng: &mut R) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let shape = self.tape.value(x).shape().to_vec();
        let keep = 1.0 - rate;
        let mask_vals: Vec<f64> = (0..self.tape.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
            .collect();
        let mask = self.tape.constant(Tensor::new(shape, mask_vals)?);
        self.tape.mul(x, mask)
    }

    /// Fold this graph's gradients into `grads` (index-aligned with the
    /// ParamSet, as produced by [`ParamSet::zero_grads`]). Adds, so multiple
    /// graphs can accumulate into one buffer.
    pub fn collect_grads_into(&self, grads: &mut [Vec<f64>]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "gradient buffer count {} does not match parameter count {}",
                grads.len(),
                self.params.len()
            )));
        }
        for (&pidx, binding) in &self.bound {
            if !self.params.get(ParamId(pidx)).trainable {
                continue;
            }
            match binding {
                Binding::Whole(tid) => {
                    if let Some(g) = self.tape.grad(*tid) {
                        for (dst, &src) in grads[pidx].iter_mut().zip(g) {
                            *dst += src;
                        }
                    }
                }
                Binding::Rows(list) => {
                    let cols = self.params.get(ParamId(pidx)).tensor.cols();
                    for (tid, rows) in list {
                        if let Some(g) = self.tape.grad(*tid) {
                            for (i, &r) in rows.iter().enumerate() {
                                let dst = &mut grads[pidx][r * cols..(r + 1) * cols];
                                let src = &g[i * cols..(i + 1) * cols];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
