//! Reverse-mode automatic differentiation over a linear tape.
//!
//! The forward pass records one node per operation; nodes refer to their
//! inputs by index, so the tape is topologically ordered by construction.
//! `backward` walks it once in reverse, accumulating gradients additively
//! across fan-out. Everything is plain `f64` loops in a fixed order, so two
//! backward passes over the same tape are bitwise identical.

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    /// Parts juxtaposed along `axis` (0 = rows, 1 = cols).
    Concat { axis: usize, parts: Vec<TensorId> },
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Relu(TensorId),
    Ln(TensorId),
    SoftmaxRows(TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    SliceCols { src: TensorId, start: usize, end: usize },
    GatherRows { src: TensorId, rows: Vec<usize> },
    /// Row `i` of `src` scaled by `weights[i]` (weights has one entry per row).
    ScaleRows { src: TensorId, weights: TensorId },
    /// Matrix plus a `1×n` row broadcast over every row.
    AddRow { src: TensorId, row: TensorId },
    SumAll(TensorId),
    /// Per-row stable softmax cross-entropy against integer targets.
    CrossEntropyRows { logits: TensorId, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    tensor: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

// Raw kernels. `a` is m×k, `b` is k×n unless suffixed: `_nt` multiplies by the
// transpose of b (n×k), `_tn` by the transpose of a (k×m).
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    // a: m×k, b: n×k, out: m×n = a · bᵀ
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    // a: m×k, b: m×n, out: k×n = aᵀ · b
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn softmax_row_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf; gradient participation follows `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { op: Op::Leaf, tensor: t });
        id
    }

    /// Record a leaf that never takes gradients.
    pub fn constant(&mut self, mut t: Tensor) -> TensorId {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        let mut tensor = Tensor::new(shape, values).expect("internal: op produced bad shape");
        tensor.requires_grad = requires_grad;
        self.nodes.push(Node { op, tensor });
        id
    }

    fn rg(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    fn shape_of(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    fn vals(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.values()
    }

    // ── Operations ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(shape_err("matmul", self.shape_of(a), self.shape_of(b)));
        }
        let out = matmul_raw(self.vals(a), self.vals(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), vec![m, n], out, rg))
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat: no parts".into()));
        }
        if axis > 1 {
            return Err(Error::Contract(format!("concat: axis {axis} out of range")));
        }
        let (r0, c0) = self.value(parts[0]).dims2();
        let (mut rows, mut cols) = (r0, c0);
        for &p in &parts[1..] {
            let (r, c) = self.value(p).dims2();
            if axis == 0 {
                if c != c0 {
                    return Err(shape_err("concat", self.shape_of(parts[0]), self.shape_of(p)));
                }
                rows += r;
            } else {
                if r != r0 {
                    return Err(shape_err("concat", self.shape_of(parts[0]), self.shape_of(p)));
                }
                cols += c;
            }
        }
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(self.vals(p));
            }
        } else {
            for i in 0..rows {
                for &p in parts {
                    let c = self.value(p).cols();
                    let v = self.vals(p);
                    out.extend_from_slice(&v[i * c..(i + 1) * c]);
                }
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Op::Concat { axis, parts: parts.to_vec() },
            vec![rows, cols],
            out,
            rg,
        ))
    }

    /// Broadcast check for binary elementwise ops: shapes equal, or one side
    /// is a single element.
    fn binary_shapes(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<Vec<usize>> {
        let sa = self.shape_of(a);
        let sb = self.shape_of(b);
        if sa == sb || self.value(b).numel() == 1 {
            Ok(sa.to_vec())
        } else if self.value(a).numel() == 1 {
            Ok(sb.to_vec())
        } else {
            Err(shape_err(op, sa, sb))
        }
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let shape = self.binary_shapes(op_name, a, b)?;
        let va = self.vals(a);
        let vb = self.vals(b);
        let out = if va.len() == vb.len() {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else if vb.len() == 1 {
            let y = vb[0];
            va.iter().map(|&x| f(x, y)).collect()
        } else {
            let x = va[0];
            vb.iter().map(|&y| f(x, y)).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, shape, out, rg))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        let shape = self.shape_of(a).to_vec();
        let out = self.vals(a).iter().map(|&x| x * k).collect();
        let rg = self.rg(a);
        self.push(Op::Scale(a, k), shape, out, rg)
    }

    pub fn add_const(&mut self, a: TensorId, k: f64) -> TensorId {
        let shape = self.shape_of(a).to_vec();
        let out = self.vals(a).iter().map(|&x| x + k).collect();
        let rg = self.rg(a);
        self.push(Op::AddConst(a), shape, out, rg)
    }

    fn unary(&mut self, a: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let shape = self.shape_of(a).to_vec();
        let out = self.vals(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(op, shape, out, rg)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn ln(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    /// Row-wise softmax with max subtraction. Rejects non-finite input.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        if !self.value(a).is_finite() {
            return Err(Error::Numeric("softmax_rows: non-finite input".into()));
        }
        let (m, n) = self.value(a).dims2();
        let mut out = self.vals(a).to_vec();
        for i in 0..m {
            softmax_row_inplace(&mut out[i * n..(i + 1) * n]);
        }
        let rg = self.rg(a);
        Ok(self.push(Op::SoftmaxRows(a), vec![m, n], out, rg))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.value(a).dims2();
        let v = self.vals(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push(Op::Transpose(a), vec![n, m], out, rg)
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        if rows * cols != self.value(a).numel() {
            return Err(shape_err("reshape", self.shape_of(a), &[rows, cols]));
        }
        let out = self.vals(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a), vec![rows, cols], out, rg))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let (m, n) = self.value(a).dims2();
        if start >= end || end > n {
            return Err(Error::Contract(format!(
                "slice_cols: [{start}, {end}) out of range for {n} columns"
            )));
        }
        let v = self.vals(a);
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&v[i * n + start..i * n + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Op::SliceCols { src: a, start, end }, vec![m, w], out, rg))
    }

    pub fn gather_rows(&mut self, a: TensorId, rows: &[usize]) -> Result<TensorId> {
        let (m, n) = self.value(a).dims2();
        if rows.is_empty() {
            return Err(Error::Contract("gather_rows: empty row list".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Contract(format!(
                "gather_rows: row {bad} out of range for {m} rows"
            )));
        }
        let v = self.vals(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&v[r * n..(r + 1) * n]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Op::GatherRows { src: a, rows: rows.to_vec() },
            vec![rows.len(), n],
            out,
            rg,
        ))
    }

    /// `out[i, :] = weights[i] * src[i, :]`; `weights` must hold one entry per row.
    pub fn scale_rows(&mut self, src: TensorId, weights: TensorId) -> Result<TensorId> {
        let (m, n) = self.value(src).dims2();
        if self.value(weights).numel() != m {
            return Err(shape_err("scale_rows", self.shape_of(src), self.shape_of(weights)));
        }
        let v = self.vals(src);
        let w = self.vals(weights);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(w[i] * v[i * n + j]);
            }
        }
        let rg = self.rg(src) || self.rg(weights);
        Ok(self.push(Op::ScaleRows { src, weights }, vec![m, n], out, rg))
    }

    /// Matrix plus row vector: `out[i, :] = src[i, :] + row`.
    pub fn add_row(&mut self, src: TensorId, row: TensorId) -> Result<TensorId> {
        let (m, n) = self.value(src).dims2();
        let (rr, rc) = self.value(row).dims2();
        if rr != 1 || rc != n {
            return Err(shape_err("add_row", self.shape_of(src), self.shape_of(row)));
        }
        let v = self.vals(src);
        let r = self.vals(row);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(v[i * n + j] + r[j]);
            }
        }
        let rg = self.rg(src) || self.rg(row);
        Ok(self.push(Op::AddRow { src, row }, vec![m, n], out, rg))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.vals(a).iter().sum();
        let rg = self.rg(a);
        self.push(Op::SumAll(a), vec![1, 1], vec![s], rg)
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.value(a).numel();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// `out[i] = logsumexp(logits[i, :]) - logits[i, targets[i]]`, an `m×1`
    /// column of per-row cross-entropy losses.
    pub fn cross_entropy_rows(&mut self, logits: TensorId, targets: &[usize]) -> Result<TensorId> {
        let (m, n) = self.value(logits).dims2();
        if targets.len() != m {
            return Err(Error::Contract(format!(
                "cross_entropy_rows: {m} rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::Contract(format!(
                "cross_entropy_rows: target {bad} out of range for {n} classes"
            )));
        }
        let v = self.vals(logits);
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row = &v[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            out.push(lse - row[targets[i]]);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Op::CrossEntropyRows { logits, targets: targets.to_vec() },
            vec![m, 1],
            out,
            rg,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Populate gradients of every `requires_grad` tensor reachable from
    /// `loss`. `loss` must be scalar.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape_of(loss)
            )));
        }
        for n in &mut self.nodes {
            n.tensor.grad = None;
        }
        self.nodes[loss.0].tensor.grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tensor.requires_grad || self.nodes[i].tensor.grad.is_none() {
                continue;
            }
            let g = self.nodes[i].tensor.grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(a).dims2();
                    let n = self.value(b).cols();
                    if self.rg(a) {
                        let da = matmul_nt(&g, self.vals(b), m, n, k);
                        self.accum(a, &da);
                    }
                    if self.rg(b) {
                        let db = matmul_tn(self.vals(a), &g, m, k, n);
                        self.accum(b, &db);
                    }
                }
                Op::Concat { axis, parts } => {
                    let cols_out = self.nodes[i].tensor.cols();
                    let mut row_off = 0usize;
                    let mut col_off = 0usize;
                    for p in parts {
                        let (pr, pc) = self.value(p).dims2();
                        if self.rg(p) {
                            let mut dp = vec![0.0; pr * pc];
                            if axis == 0 {
                                dp.copy_from_slice(
                                    &g[row_off * cols_out..(row_off + pr) * cols_out],
                                );
                            } else {
                                for r in 0..pr {
                                    for c in 0..pc {
                                        dp[r * pc + c] = g[r * cols_out + col_off + c];
                                    }
                                }
                            }
                            self.accum(p, &dp);
                        }
                        row_off += pr;
                        col_off += pc;
                    }
                }
                Op::Add(a, b) => {
                    self.accum_broadcast(a, &g, 1.0);
                    self.accum_broadcast(b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.accum_broadcast(a, &g, 1.0);
                    self.accum_broadcast(b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let da = self.broadcast_mul_grad(&g, b, self.value(a).numel());
                        self.accum(a, &da);
                    }
                    if self.rg(b) {
                        let db = self.broadcast_mul_grad(&g, a, self.value(b).numel());
                        self.accum(b, &db);
                    }
                }
                Op::Scale(a, k) => {
                    if self.rg(a) {
                        let da: Vec<f64> = g.iter().map(|&x| x * k).collect();
                        self.accum(a, &da);
                    }
                }
                Op::AddConst(a) => {
                    if self.rg(a) {
                        self.accum(a, &g);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.rg(a) {
                        let y = self.nodes[i].tensor.values();
                        let da: Vec<f64> =
                            g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect();
                        self.accum(a, &da);
                    }
                }
                Op::Tanh(a) => {
                    if self.rg(a) {
                        let y = self.nodes[i].tensor.values();
                        let da: Vec<f64> =
                            g.iter().zip(y).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect();
                        self.accum(a, &da);
                    }
                }
                Op::Relu(a) => {
                    if self.rg(a) {
                        let x = self.vals(a);
                        let da: Vec<f64> = g
                            .iter()
                            .zip(x)
                            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                            .collect();
                        self.accum(a, &da);
                    }
                }
                Op::Ln(a) => {
                    if self.rg(a) {
                        let x = self.vals(a);
                        let da: Vec<f64> = g.iter().zip(x).map(|(&gv, &xv)| gv / xv).collect();
                        self.accum(a, &da);
                    }
                }
                Op::SoftmaxRows(a) => {
                    if self.rg(a) {
                        let (m, n) = self.nodes[i].tensor.dims2();
                        let y = self.nodes[i].tensor.values();
                        let mut da = vec![0.0; m * n];
                        for r in 0..m {
                            let yr = &y[r * n..(r + 1) * n];
                            let gr = &g[r * n..(r + 1) * n];
                            let dot: f64 = yr.iter().zip(gr).map(|(&a_, &b_)| a_ * b_).sum();
                            for c in 0..n {
                                da[r * n + c] = yr[c] * (gr[c] - dot);
                            }
                        }
                        self.accum(a, &da);
                    }
                }
                Op::Transpose(a) => {
                    if self.rg(a) {
                        let (m, n) = self.value(a).dims2();
                        let mut da = vec![0.0; m * n];
                        for r in 0..n {
                            for c in 0..m {
                                da[c * n + r] = g[r * m + c];
                            }
                        }
                        self.accum(a, &da);
                    }
                }
                Op::Reshape(a) => {
                    if self.rg(a) {
                        self.accum(a, &g);
                    }
                }
                Op::SliceCols { src, start, end } => {
                    if self.rg(src) {
                        let (m, n) = self.value(src).dims2();
                        let w = end - start;
                        let mut da = vec![0.0; m * n];
                        for r in 0..m {
                            for c in 0..w {
                                da[r * n + start + c] = g[r * w + c];
                            }
                        }
                        self.accum(src, &da);
                    }
                }
                Op::GatherRows { src, rows } => {
                    if self.rg(src) {
                        let (m, n) = self.value(src).dims2();
                        let mut da = vec![0.0; m * n];
                        for (out_r, &src_r) in rows.iter().enumerate() {
                            for c in 0..n {
                                da[src_r * n + c] += g[out_r * n + c];
                            }
                        }
                        self.accum(src, &da);
                    }
                }
                Op::ScaleRows { src, weights } => {
                    let (m, n) = self.value(src).dims2();
                    if self.rg(src) {
                        let w = self.vals(weights);
                        let mut da = vec![0.0; m * n];
                        for r in 0..m {
                            for c in 0..n {
                                da[r * n + c] = w[r] * g[r * n + c];
                            }
                        }
                        self.accum(src, &da);
                    }
                    if self.rg(weights) {
                        let v = self.vals(src);
                        let mut dw = vec![0.0; m];
                        for r in 0..m {
                            let mut s = 0.0;
                            for c in 0..n {
                                s += v[r * n + c] * g[r * n + c];
                            }
                            dw[r] = s;
                        }
                        self.accum(weights, &dw);
                    }
                }
                Op::AddRow { src, row } => {
                    let (m, n) = self.value(src).dims2();
                    if self.rg(src) {
                        self.accum(src, &g);
                    }
                    if self.rg(row) {
                        let mut dr = vec![0.0; n];
                        for r in 0..m {
                            for c in 0..n {
                                dr[c] += g[r * n + c];
                            }
                        }
                        self.accum(row, &dr);
                    }
                }
                Op::SumAll(a) => {
                    if self.rg(a) {
                        let da = vec![g[0]; self.value(a).numel()];
                        self.accum(a, &da);
                    }
                }
                Op::CrossEntropyRows { logits, targets } => {
                    if self.rg(logits) {
                        let (m, n) = self.value(logits).dims2();
                        let v = self.vals(logits);
                        let mut da = vec![0.0; m * n];
                        for r in 0..m {
                            let row = &v[r * n..(r + 1) * n];
                            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                            for c in 0..n {
                                let p = (row[c] - max).exp() / sum;
                                let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                                da[r * n + c] = g[r] * (p - onehot);
                            }
                        }
                        self.accum(logits, &da);
                    }
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, id: TensorId, contribution: &[f64]) {
        let t = &mut self.nodes[id.0].tensor;
        match &mut t.grad {
            Some(g) => {
                for (gv, &cv) in g.iter_mut().zip(contribution) {
                    *gv += cv;
                }
            }
            None => t.grad = Some(contribution.to_vec()),
        }
    }

    /// Accumulate `sign * g` into `id`, reducing to a scalar when `id` was the
    /// broadcast (single-element) side of a binary op.
    fn accum_broadcast(&mut self, id: TensorId, g: &[f64], sign: f64) {
        if !self.rg(id) {
            return;
        }
        if self.value(id).numel() == 1 && g.len() > 1 {
            let s: f64 = g.iter().sum();
            self.accum(id, &[sign * s]);
        } else {
            let dv: Vec<f64> = g.iter().map(|&x| sign * x).collect();
            self.accum(id, &dv);
        }
    }

    /// Gradient of `a * b` w.r.t. one side: upstream times the other side,
    /// reduced when the target side was broadcast.
    fn broadcast_mul_grad(&self, g: &[f64], other: TensorId, target_numel: usize) -> Vec<f64> {
        let ov = self.vals(other);
        if target_numel == 1 && g.len() > 1 {
            // target was the scalar side
            let s: f64 = if ov.len() == 1 {
                g.iter().sum::<f64>() * ov[0]
            } else {
                g.iter().zip(ov).map(|(&gv, &o)| gv * o).sum()
            };
            vec![s]
        } else if ov.len() == 1 {
            g.iter().map(|&gv| gv * ov[0]).collect()
        } else {
            g.iter().zip(ov).map(|(&gv, &o)| gv * o).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = tape.constant(t(&[vec![3.0, 4.0], vec![5.0, 6.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).values(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 2.0]]));
        let b = tape.constant(t(&[vec![3.0], vec![4.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).values(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 2));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_grad_of_sum_is_ones_times_b_transpose() {
        // d sum(AB) / dA = 1 · Bᵀ
        let mut tape = Tape::new();
        let av = Tensor::rand_uniform(3, 4, -1.0, 1.0, &mut rng(7)).with_grad();
        let bv = Tensor::rand_uniform(4, 2, -1.0, 1.0, &mut rng(8));
        let b_vals = bv.values().to_vec();
        let a = tape.leaf(av);
        let b = tape.constant(bv);
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c);
        tape.backward(loss).unwrap();
        let got = tape.grad(a).unwrap();
        for i in 0..3 {
            for k in 0..4 {
                let want: f64 = (0..2).map(|j| b_vals[k * 2 + j]).sum();
                assert!((got[i * 4 + k] - want).abs() < 1e-12);
            }
        }
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn concat_axis1_and_single() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0], vec![2.0]]));
        let b = tape.constant(t(&[vec![3.0], vec![4.0]]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).values(), &[1.0, 3.0, 2.0, 4.0]);
        let solo = tape.concat(&[a], 0).unwrap();
        assert_eq!(tape.value(solo).values(), tape.value(a).values());
    }

    #[test]
    fn concat_backward_splits_upstream_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[vec![1.0, 2.0]]).with_grad());
        let b = tape.leaf(t(&[vec![3.0]]).with_grad());
        let c = tape.concat(&[a, b], 1).unwrap();
        let w = tape.constant(t(&[vec![10.0], vec![20.0], vec![30.0]]));
        let y = tape.matmul(c, w).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[10.0, 20.0]);
        assert_eq!(tape.grad(b).unwrap(), &[30.0]);
    }

    #[test]
    fn sigmoid_tanh_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        let th = tape.tanh(x);
        assert_eq!(tape.value(s).values()[0], 0.5);
        assert_eq!(tape.value(th).values()[0], 0.0);
    }

    #[test]
    fn softmax_symmetry_and_overflow() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![0.0, 0.0]]));
        let s = tape.softmax_rows(a).unwrap();
        assert_eq!(tape.value(s).values(), &[0.5, 0.5]);
        let b = tape.constant(t(&[vec![1000.0, 1000.0]]));
        let s2 = tape.softmax_rows(b).unwrap();
        assert_eq!(tape.value(s2).values(), &[0.5, 0.5]);
        let c = tape.constant(t(&[vec![f64::NAN, 0.0]]));
        assert!(tape.softmax_rows(c).is_err());
    }

    #[test]
    fn softmax_matches_naive_and_is_monotone() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 2.0, 3.0]]));
        let s = tape.softmax_rows(a).unwrap();
        let got = tape.value(s).values();
        // independent oracle: direct exp / sum
        let exps: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (g, e) in got.iter().zip(&exps) {
            assert!((g - e / sum).abs() < 1e-12);
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(got[0] < got[1] && got[1] < got[2]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.0, 2.0, 3.0]]).with_grad());
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_product_swaps_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0).with_grad());
        let y = tape.leaf(Tensor::scalar(3.0).with_grad());
        let p = tape.mul(x, y).unwrap();
        tape.backward(p).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0]);
        assert_eq!(tape.grad(y).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_diamond_accumulates_both_paths() {
        // loss = x*x (x used twice) → dx = 2x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(5.0).with_grad());
        let p = tape.mul(x, x).unwrap();
        tape.backward(p).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[10.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.0, 2.0]]).with_grad());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::rand_uniform(3, 3, -1.0, 1.0, &mut rng(3)).with_grad());
            let y = tape.tanh(x);
            let z = tape.mul(y, y).unwrap();
            let loss = tape.sum_all(z);
            tape.backward(loss).unwrap();
            tape.grad(x).unwrap().to_vec()
        };
        let a = build();
        let b = build();
        assert_eq!(a, b, "bitwise identical gradients expected");
    }

    #[test]
    fn fanout_grad_equals_sum_of_branches() {
        // f = sum(x·w1) + sum(x·w2); zeroing one branch must subtract exactly
        // that branch's contribution.
        let w1 = t(&[vec![2.0], vec![4.0]]);
        let w2 = t(&[vec![7.0], vec![11.0]]);
        let run = |use1: bool, use2: bool| {
            let mut tape = Tape::new();
            let x = tape.leaf(t(&[vec![1.0, 1.0]]).with_grad());
            let a = tape.constant(w1.clone());
            let b = tape.constant(w2.clone());
            let mut parts = Vec::new();
            if use1 {
                let p = tape.matmul(x, a).unwrap();
                parts.push(tape.sum_all(p));
            }
            if use2 {
                let p = tape.matmul(x, b).unwrap();
                parts.push(tape.sum_all(p));
            }
            let loss = if parts.len() == 2 {
                tape.add(parts[0], parts[1]).unwrap()
            } else {
                parts[0]
            };
            tape.backward(loss).unwrap();
            tape.grad(x).unwrap().to_vec()
        };
        let both = run(true, true);
        let only1 = run(true, false);
        let only2 = run(false, true);
        for i in 0..2 {
            assert!((both[i] - (only1[i] + only2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_matches_manual() {
        let mut tape = Tape::new();
        let z = tape.constant(t(&[vec![1.0, 0.0]]));
        let ce = tape.cross_entropy_rows(z, &[0]).unwrap();
        // -ln softmax([1,0])[0] = ln(1 + e^-1)
        let want = (1.0 + (-1.0f64).exp()).ln();
        assert!((tape.value(ce).values()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn gather_rows_backward_accumulates_duplicates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]).with_grad());
        let g = tape.gather_rows(x, &[0, 0, 1]).unwrap();
        let loss = tape.sum_all(g);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 1.0, 1.0]);
    }
}
