//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Primitives append a node to the [`Graph`] and return a [`Var`] handle.
//! [`Graph::backward`] walks the recorded nodes once, newest first, and
//! accumulates gradients into every leaf created with `requires_grad`.
//! A fresh graph is built for every training step.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Normalizer epsilon used by [`Graph::batch_norm`].
pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running moment at each train-mode update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// Running per-feature moments consumed by eval-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        RunningMoments {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    SegmentSoftmax(Var, Vec<(usize, usize)>),
    BatchNormTrain {
        x: Var,
        scale: Var,
        offset: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        scale: Var,
        offset: Var,
        x: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    RowSelect(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    MaxOverSets(Var, Vec<Option<usize>>),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    WeightedSum(Var, Vec<f64>),
    WeightedRowSum {
        weights: Var,
        rows: Var,
        row_of: Vec<usize>,
        group_of: Vec<usize>,
    },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Leaf gradients persist across [`Graph::backward`]
/// calls and accumulate until [`Graph::zero_grad`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` computed as `-softplus(-x)`.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        check_finite(name, &data)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Tensor::from_parts(shape, data), op, rg))
    }

    /// Adds an input tensor. Gradients are tracked only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .ok_or_else(|| Error::shape(op, format!("expected a matrix, got {:?}", self.shape(v))))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions {k} and {k2} differ"),
            ));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push_checked("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("transpose", a)?;
        let out = transpose_raw(self.value(a).data(), m, n);
        self.push_checked("transpose", vec![n, m], out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("add", shape, out, Op::Add(a, b), &[a, b])
    }

    /// Adds a length-`D` vector to every row of a `B×D` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2("add_bias", x)?;
        if self.value(bias).len() != c {
            return Err(Error::shape(
                "add_bias",
                format!("bias of {} for {c} columns", self.value(bias).len()),
            ));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..r {
            for (o, bv) in out[i * c..(i + 1) * c].iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.push_checked("add_bias", vec![r, c], out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("sub", shape, out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("mul", shape, out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("scale", shape, out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x + c).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("add_scalar", shape, out, Op::AddScalar(a), &[a])
    }

    /// `max(0, x)`. The subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("relu", shape, out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| stable_sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("sigmoid", shape, out, Op::Sigmoid(a), &[a])
    }

    /// `log σ(x)`, stable for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| log_sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("log_sigmoid", shape, out, Op::LogSigmoid(a), &[a])
    }

    /// Max-subtracted softmax over all elements.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        self.segment_softmax(a, &[(0, n)])
    }

    /// Independent softmax over each `[start, end)` segment of a flat vector.
    /// Segments must be nonempty, disjoint and cover the input.
    pub fn segment_softmax(&mut self, a: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let x = self.value(a).data();
        let mut covered = 0;
        for &(s, e) in segments {
            if s != covered || e <= s || e > x.len() {
                return Err(Error::shape(
                    "segment_softmax",
                    format!("bad segment [{s}, {e}) over {} values", x.len()),
                ));
            }
            covered = e;
        }
        if covered != x.len() {
            return Err(Error::shape("segment_softmax", "segments do not cover input"));
        }
        let mut out = vec![0.0; x.len()];
        for &(s, e) in segments {
            let m = x[s..e].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in s..e {
                out[i] = (x[i] - m).exp();
                z += out[i];
            }
            for o in &mut out[s..e] {
                *o /= z;
            }
        }
        let shape = self.shape(a).to_vec();
        self.push_checked(
            "softmax",
            shape,
            out,
            Op::SegmentSoftmax(a, segments.to_vec()),
            &[a],
        )
    }

    /// Per-column batch normalization of a `B×D` matrix followed by the
    /// affine map `scale * x̂ + offset`.
    ///
    /// Train mode normalizes with the batch moments and folds them into
    /// `moments`; eval mode reads `moments` and leaves them unchanged.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        offset: Var,
        mode: Mode,
        moments: &mut RunningMoments,
    ) -> Result<Var> {
        let (b, d) = self.dims2("batch_norm", x)?;
        if self.value(scale).len() != d || self.value(offset).len() != d || moments.dim() != d {
            return Err(Error::shape(
                "batch_norm",
                format!("affine/moment dims do not match {d} columns"),
            ));
        }
        let xs = self.value(x).data();
        let gamma = self.value(scale).data();
        let beta = self.value(offset).data();
        let mut xhat = vec![0.0; b * d];
        let mut out = vec![0.0; b * d];
        let mut inv_std = vec![0.0; d];
        match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::DegenerateBatch(b));
                }
                for j in 0..d {
                    let mean = (0..b).map(|i| xs[i * d + j]).sum::<f64>() / b as f64;
                    let var = (0..b)
                        .map(|i| {
                            let c = xs[i * d + j] - mean;
                            c * c
                        })
                        .sum::<f64>()
                        / b as f64;
                    let is = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[j] = is;
                    for i in 0..b {
                        let h = (xs[i * d + j] - mean) * is;
                        xhat[i * d + j] = h;
                        out[i * d + j] = gamma[j] * h + beta[j];
                    }
                    moments.mean[j] = BN_MOMENTUM * moments.mean[j] + (1.0 - BN_MOMENTUM) * mean;
                    moments.var[j] = BN_MOMENTUM * moments.var[j] + (1.0 - BN_MOMENTUM) * var;
                }
                self.push_checked(
                    "batch_norm",
                    vec![b, d],
                    out,
                    Op::BatchNormTrain {
                        x,
                        scale,
                        offset,
                        xhat,
                        inv_std,
                    },
                    &[x, scale, offset],
                )
            }
            Mode::Eval => {
                for j in 0..d {
                    let is = 1.0 / (moments.var[j] + BN_EPS).sqrt();
                    inv_std[j] = is;
                    for i in 0..b {
                        let h = (xs[i * d + j] - moments.mean[j]) * is;
                        xhat[i * d + j] = h;
                        out[i * d + j] = gamma[j] * h + beta[j];
                    }
                }
                self.push_checked(
                    "batch_norm",
                    vec![b, d],
                    out,
                    Op::BatchNormEval {
                        x,
                        scale,
                        offset,
                        xhat,
                        inv_std,
                    },
                    &[x, scale, offset],
                )
            }
        }
    }

    /// Flat concatenation into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "nothing to concatenate"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let n = out.len();
        self.push_checked("concat", vec![n], out, Op::Concat(parts.to_vec()), parts)
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "nothing to concatenate"));
        }
        let rows = self.dims2("concat_cols", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != rows {
                return Err(Error::shape("concat_cols", format!("{r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push_checked(
            "concat_cols",
            vec![rows, total],
            out,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    /// Picks rows of a matrix (repeats allowed).
    pub fn row_select(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2("row_select", x)?;
        if rows.is_empty() {
            return Err(Error::shape("row_select", "no rows selected"));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::shape("row_select", format!("row {i} of {r}")));
            }
            out.extend_from_slice(&self.value(x).data()[i * c..(i + 1) * c]);
        }
        self.push_checked(
            "row_select",
            vec![rows.len(), c],
            out,
            Op::RowSelect(x, rows.to_vec()),
            &[x],
        )
    }

    /// Picks elements by flat index into a vector.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if idx.is_empty() {
            return Err(Error::shape("gather", "no elements selected"));
        }
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= n {
                return Err(Error::shape("gather", format!("index {i} of {n}")));
            }
            out.push(self.value(x).data()[i]);
        }
        self.push_checked(
            "gather",
            vec![idx.len()],
            out,
            Op::Gather(x, idx.to_vec()),
            &[x],
        )
    }

    /// `out[i] = max_{k ∈ sets[i]} x.flat[k]`, with an empty set yielding 0.
    /// The gradient flows to a single argmax; ties go to the lowest index.
    pub fn max_over_sets(&mut self, x: Var, sets: &[Vec<usize>]) -> Result<Var> {
        let xs = self.value(x).data();
        if sets.is_empty() {
            return Err(Error::shape("max_over_sets", "no sets"));
        }
        let mut out = Vec::with_capacity(sets.len());
        let mut arg = Vec::with_capacity(sets.len());
        for set in sets {
            let mut best: Option<usize> = None;
            for &k in set {
                if k >= xs.len() {
                    return Err(Error::shape("max_over_sets", format!("index {k} of {}", xs.len())));
                }
                best = match best {
                    None => Some(k),
                    Some(b) if xs[k] > xs[b] || (xs[k] == xs[b] && k < b) => Some(k),
                    keep => keep,
                };
            }
            out.push(best.map_or(0.0, |b| xs[b]));
            arg.push(best);
        }
        let n = out.len();
        self.push_checked("max_over_sets", vec![n], out, Op::MaxOverSets(x, arg), &[x])
    }

    /// Elementwise minimum; on ties the gradient goes to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("minimum", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| if x <= y { x } else { y })
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("minimum", shape, out, Op::Minimum(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push_checked("sum", Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_checked("mean", Vec::new(), vec![s], Op::Mean(a), &[a])
    }

    /// `Σ_i w_i x_i` for constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(a).len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), self.value(a).len()),
            ));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(&weights)
            .map(|(x, w)| x * w)
            .sum();
        self.push_checked("weighted_sum", Vec::new(), vec![s], Op::WeightedSum(a, weights), &[a])
    }

    /// Attention-style pooling: `out[group_of[i]] += weights[i] * rows[row_of[i]]`
    /// producing a `groups × D` matrix.
    pub fn weighted_row_sum(
        &mut self,
        weights: Var,
        rows: Var,
        row_of: &[usize],
        group_of: &[usize],
        groups: usize,
    ) -> Result<Var> {
        let (r, d) = self.dims2("weighted_row_sum", rows)?;
        let w = self.value(weights).data();
        if w.len() != row_of.len() || w.len() != group_of.len() || groups == 0 {
            return Err(Error::shape(
                "weighted_row_sum",
                "weights, row_of and group_of must align",
            ));
        }
        let xs = self.value(rows).data();
        let mut out = vec![0.0; groups * d];
        for i in 0..w.len() {
            let (ri, gi) = (row_of[i], group_of[i]);
            if ri >= r || gi >= groups {
                return Err(Error::shape("weighted_row_sum", "index out of range"));
            }
            for j in 0..d {
                out[gi * d + j] += w[i] * xs[ri * d + j];
            }
        }
        self.push_checked(
            "weighted_row_sum",
            vec![groups, d],
            out,
            Op::WeightedRowSum {
                weights,
                rows,
                row_of: row_of.to_vec(),
                group_of: group_of.to_vec(),
            },
            &[weights, rows],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} to {shape:?}", self.shape(a)),
            ));
        }
        let data = self.value(a).data().to_vec();
        self.push_checked("reshape", shape.to_vec(), data, Op::Reshape(a), &[a])
    }

    /// Reverse pass from a scalar root. Leaf gradients accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        for g in self.leaf_grads.iter().flatten() {
            check_finite("backward", g)?;
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let rg = |v: Var| nodes[v.0].requires_grad;
        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, n: usize) -> &'a mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice()
        }
        let len = |v: Var| nodes[v.0].value.len();

        match &nodes[i].op {
            Op::Leaf => {
                let slot = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                for (s, v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].value.dims2().unwrap();
                let n = nodes[b.0].value.dims2().unwrap().1;
                if rg(*a) {
                    let bt = transpose_raw(val(*b), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    add_into(acc(grads, *a, m * k), &da);
                }
                if rg(*b) {
                    let at = transpose_raw(val(*a), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    add_into(acc(grads, *b, k * n), &db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = nodes[a.0].value.dims2().unwrap();
                let gt = transpose_raw(g, n, m);
                add_into(acc(grads, *a, m * n), &gt);
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if rg(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                let (r, c) = nodes[x.0].value.dims2().unwrap();
                if rg(*x) {
                    add_into(acc(grads, *x, r * c), g);
                }
                if rg(*bias) {
                    let gb = acc(grads, *bias, c);
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if rg(*b) {
                    for (s, v) in acc(grads, *b, g.len()).iter_mut().zip(g) {
                        *s -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                if rg(*a) {
                    for ((s, gv), y) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(&bv) {
                        *s += gv * y;
                    }
                }
                if rg(*b) {
                    for ((s, gv), x) in acc(grads, *b, g.len()).iter_mut().zip(g).zip(&av) {
                        *s += gv * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                for (s, v) in acc(grads, *a, g.len()).iter_mut().zip(g) {
                    *s += c * v;
                }
            }
            Op::AddScalar(a) => add_into(acc(grads, *a, g.len()), g),
            Op::Relu(a) => {
                let x = val(*a).to_vec();
                for ((s, gv), xv) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(&x) {
                    if *xv > 0.0 {
                        *s += gv;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = nodes[i].value.data().to_vec();
                for ((s, gv), yv) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(&y) {
                    *s += gv * yv * (1.0 - yv);
                }
            }
            Op::LogSigmoid(a) => {
                // d/dx log σ(x) = σ(-x)
                let x = val(*a).to_vec();
                for ((s, gv), xv) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(&x) {
                    *s += gv * stable_sigmoid(-xv);
                }
            }
            Op::SegmentSoftmax(a, segs) => {
                let y = nodes[i].value.data().to_vec();
                let segs = segs.clone();
                let ga = acc(grads, *a, g.len());
                for (s, e) in segs {
                    let dot: f64 = (s..e).map(|k| g[k] * y[k]).sum();
                    for k in s..e {
                        ga[k] += y[k] * (g[k] - dot);
                    }
                }
            }
            Op::BatchNormTrain {
                x,
                scale,
                offset,
                xhat,
                inv_std,
            } => {
                let (b, d) = nodes[x.0].value.dims2().unwrap();
                let gamma = val(*scale).to_vec();
                let (x, scale, offset) = (*x, *scale, *offset);
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for r in 0..b {
                    for j in 0..d {
                        sum_g[j] += g[r * d + j];
                        sum_gx[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
                if rg(x) {
                    let bf = b as f64;
                    let mut dx = vec![0.0; b * d];
                    for r in 0..b {
                        for j in 0..d {
                            let k = r * d + j;
                            dx[k] = gamma[j] * inv_std[j] / bf
                                * (bf * g[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                        }
                    }
                    add_into(acc(grads, x, b * d), &dx);
                }
                if rg(scale) {
                    add_into(acc(grads, scale, d), &sum_gx);
                }
                if rg(offset) {
                    add_into(acc(grads, offset, d), &sum_g);
                }
            }
            Op::BatchNormEval {
                x,
                scale,
                offset,
                xhat,
                inv_std,
            } => {
                let (b, d) = nodes[x.0].value.dims2().unwrap();
                let gamma = val(*scale).to_vec();
                let (x, scale, offset) = (*x, *scale, *offset);
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for r in 0..b {
                    for j in 0..d {
                        sum_g[j] += g[r * d + j];
                        sum_gx[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
                if rg(x) {
                    let mut dx = vec![0.0; b * d];
                    for r in 0..b {
                        for j in 0..d {
                            dx[r * d + j] = g[r * d + j] * gamma[j] * inv_std[j];
                        }
                    }
                    add_into(acc(grads, x, b * d), &dx);
                }
                if rg(scale) {
                    add_into(acc(grads, scale, d), &sum_gx);
                }
                if rg(offset) {
                    add_into(acc(grads, offset, d), &sum_g);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                let parts = parts.clone();
                for p in parts {
                    let n = len(p);
                    if rg(p) {
                        add_into(acc(grads, p, n), &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|p| nodes[p.0].value.dims2().unwrap().1)
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut off = 0;
                for (&p, &w) in parts.clone().iter().zip(&widths) {
                    if rg(p) {
                        let gp = acc(grads, p, rows * w);
                        for r in 0..rows {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::RowSelect(x, rows) => {
                let c = nodes[x.0].value.dims2().unwrap().1;
                let n = len(*x);
                let rows = rows.clone();
                let gx = acc(grads, *x, n);
                for (k, &r) in rows.iter().enumerate() {
                    add_into(&mut gx[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                }
            }
            Op::Gather(x, idx) => {
                let n = len(*x);
                let idx = idx.clone();
                let gx = acc(grads, *x, n);
                for (k, &j) in idx.iter().enumerate() {
                    gx[j] += g[k];
                }
            }
            Op::MaxOverSets(x, arg) => {
                let n = len(*x);
                let arg = arg.clone();
                let gx = acc(grads, *x, n);
                for (k, a) in arg.iter().enumerate() {
                    if let Some(j) = a {
                        gx[*j] += g[k];
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                let (a, b) = (*a, *b);
                if rg(a) {
                    let ga = acc(grads, a, g.len());
                    for k in 0..g.len() {
                        if av[k] <= bv[k] {
                            ga[k] += g[k];
                        }
                    }
                }
                if rg(b) {
                    let gb = acc(grads, b, g.len());
                    for k in 0..g.len() {
                        if av[k] > bv[k] {
                            gb[k] += g[k];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let n = len(*a);
                for s in acc(grads, *a, n) {
                    *s += g[0];
                }
            }
            Op::Mean(a) => {
                let n = len(*a);
                let v = g[0] / n as f64;
                for s in acc(grads, *a, n) {
                    *s += v;
                }
            }
            Op::WeightedSum(a, w) => {
                let n = len(*a);
                let w = w.clone();
                for (s, wv) in acc(grads, *a, n).iter_mut().zip(&w) {
                    *s += g[0] * wv;
                }
            }
            Op::WeightedRowSum {
                weights,
                rows,
                row_of,
                group_of,
            } => {
                let d = nodes[rows.0].value.dims2().unwrap().1;
                let w = val(*weights).to_vec();
                let xs = val(*rows).to_vec();
                let (weights, rows) = (*weights, *rows);
                let (row_of, group_of) = (row_of.clone(), group_of.clone());
                if rg(weights) {
                    let gw = acc(grads, weights, w.len());
                    for k in 0..w.len() {
                        let (ri, gi) = (row_of[k], group_of[k]);
                        gw[k] += (0..d).map(|j| g[gi * d + j] * xs[ri * d + j]).sum::<f64>();
                    }
                }
                if rg(rows) {
                    let gr = acc(grads, rows, xs.len());
                    for k in 0..w.len() {
                        let (ri, gi) = (row_of[k], group_of[k]);
                        for j in 0..d {
                            gr[ri * d + j] += w[k] * g[gi * d + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                let n = len(*a);
                add_into(acc(grads, *a, n), g);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
