//! Reverse-mode tape over [`Tensor`] values.
//!
//! Operations append nodes in evaluation order, so the node list is already
//! topologically sorted; [`Tape::backward`] walks it once in reverse.

use std::sync::Arc;

use super::kernels::{self, dot, matmul_nn, matmul_nt, matmul_tn};
use super::Tensor;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Stabilizer inside layer normalization's square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Lower bound on a row norm in [`Tape::l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The recorded primitive that produced a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Constant,
    MatMul,
    Add,
    Sub,
    ElementwiseMul,
    ScalarMul,
    Tanh,
    Sigmoid,
    LayerNorm,
    Exp,
    Log,
    Sum,
    MeanRows,
    L2NormalizeRows,
    ConcatRows,
    GatherRows,
    SparseDenseMatMul,
    LogSumExpRows,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Exp(Var),
    Log(Var),
    Sum(Var),
    MeanRows(Var),
    L2NormalizeRows { x: Var, scale: Vec<f64>, clamped: Vec<bool> },
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    SparseMatMul { a: Arc<SparseMatrix>, x: Var },
    LogSumExpRows { x: Var, mask: Option<Vec<bool>> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::ElementwiseMul,
            Op::Scale(..) => OpKind::ScalarMul,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Sum(_) => OpKind::Sum,
            Op::MeanRows(_) => OpKind::MeanRows,
            Op::L2NormalizeRows { .. } => OpKind::L2NormalizeRows,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::SparseMatMul { .. } => OpKind::SparseDenseMatMul,
            Op::LogSumExpRows { .. } => OpKind::LogSumExpRows,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sum(x)
            | Op::MeanRows(x)
            | Op::LayerNorm { x, .. }
            | Op::L2NormalizeRows { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SparseMatMul { x, .. }
            | Op::LogSumExpRows { x, .. } => vec![*x],
            Op::ConcatRows(xs) => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if `v` requires grad and
    /// the root depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but returns zeros shaped like `like` when the
    /// root does not depend on `v`.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

/// Records tensor operations for reverse-mode differentiation.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that rejects non-finite outputs after every operation.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    /// A tape that skips per-operation finiteness checks.
    pub fn unchecked() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t, true, Op::Leaf)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, false, Op::Constant)
    }

    /// Non-trainable input shared with the caller without copying.
    pub fn constant_shared(&mut self, t: &Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            value: Arc::clone(t),
            requires_grad: false,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Inputs of the operation that produced `v`.
    pub fn op_inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push_raw(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Numerics(format!(
                "{:?} produced a non-finite value",
                op.kind()
            )));
        }
        let requires_grad = op.inputs().iter().any(|&v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        Ok(self.push_raw(value, requires_grad, op))
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(Error::shape(format!("{what} expects a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    /// `a · b`, or `a · bᵀ` when `trans_b` is set.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (br, bc) = self.matrix_dims(b, "matmul")?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {m}×{k} against {}{br}×{bc}",
                if trans_b { "transposed " } else { "" }
            )));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out = if trans_b {
            matmul_nt(av, m, k, bv, n)
        } else {
            matmul_nn(av, m, k, bv, n)
        };
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, trans_b })
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), op)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "elementwise_mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::Numerics(format!("scalar_mul by {c}")));
        }
        self.map(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numerics("log of a non-positive value".into()));
        }
        self.map(x, f64::ln, Op::Log(x))
    }

    /// Normalizes each row to zero mean and unit variance, no affine terms.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "layer_norm")?;
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = vec![0.0; r];
        for (row, s) in out.chunks_mut(c.max(1)).zip(inv_std.iter_mut()) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * *s);
        }
        self.push(Tensor::from_parts(vec![r, c], out), Op::LayerNorm { x, inv_std })
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::from_parts(vec![1, 1], vec![s]), Op::Sum(x))
    }

    /// Column means over rows: `r×c → 1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "mean_rows")?;
        if r == 0 {
            return Err(Error::shape("mean_rows of an empty matrix"));
        }
        let t = self.value(x);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        self.push(Tensor::from_parts(vec![1, c], out), Op::MeanRows(x))
    }

    /// Divides each row by `max(‖row‖, 1e-12)`.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "l2_normalize_rows")?;
        let mut out = self.value(x).data().to_vec();
        let mut scale = vec![0.0; r];
        let mut clamped = vec![false; r];
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let n = kernels::norm(row);
            clamped[i] = n < NORM_EPS;
            scale[i] = 1.0 / n.max(NORM_EPS);
            row.iter_mut().for_each(|v| *v *= scale[i]);
        }
        self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::L2NormalizeRows { x, scale, clamped },
        )
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat_rows of nothing"));
        }
        let (_, c) = self.matrix_dims(xs[0], "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let (r, cx) = self.matrix_dims(x, "concat_rows")?;
            if cx != c {
                return Err(Error::shape(format!("concat_rows: {cx} columns against {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(x).data());
        }
        self.push(Tensor::from_parts(vec![rows, c], out), Op::ConcatRows(xs.to_vec()))
    }

    /// Rows `idx` of `x`, in order; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, _) = self.matrix_dims(x, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape(format!("gather_rows index {bad} out of {r} rows")));
        }
        let out = self.value(x).select_rows(idx);
        self.push(out, Op::GatherRows { x, idx: idx.to_vec() })
    }

    /// `a · x` for a constant sparse `a`.
    pub fn sparse_matmul(&mut self, a: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let (r, d) = self.matrix_dims(x, "sparse_dense_matmul")?;
        if a.cols() != r {
            return Err(Error::shape(format!(
                "sparse {}×{} matrix against dense {r}×{d}",
                a.rows(),
                a.cols()
            )));
        }
        let out = a.matmul_dense(self.value(x).data(), d);
        self.push(
            Tensor::from_parts(vec![a.rows(), d], out),
            Op::SparseMatMul { a: Arc::clone(a), x },
        )
    }

    /// Row-wise `log Σ exp`, restricted to entries where `mask` is true.
    /// Output is `r×1`. Every row must keep at least one entry.
    pub fn logsumexp_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "logsumexp_rows")?;
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::shape(format!("logsumexp mask has {} entries for {r}×{c}", m.len())));
            }
        }
        let t = self.value(x);
        let mut out = vec![0.0; r];
        for (i, o) in out.iter_mut().enumerate() {
            let row = t.row(i);
            let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let max = (0..c).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::contract(format!("logsumexp row {i} has no unmasked entries")));
            }
            let s: f64 = (0..c).filter(|&j| keep(j)).map(|j| (row[j] - max).exp()).sum();
            *o = max + s.ln();
        }
        self.push(
            Tensor::from_parts(vec![r, 1], out),
            Op::LogSumExpRows {
                x,
                mask: mask.map(|m| m.to_vec()),
            },
        )
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// requires grad.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::from_parts(n.value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = node.value.cols();
                if self.requires_grad(*a) {
                    // dA = G·B (trans) or G·Bᵀ
                    let ga = if *trans_b {
                        matmul_nn(g, m, n, tb.data(), k)
                    } else {
                        matmul_nt(g, m, n, tb.data(), k)
                    };
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    // dB = Gᵀ·A (trans) or Aᵀ·G
                    let gb = if *trans_b {
                        matmul_tn(g, m, n, ta.data(), k)
                    } else {
                        matmul_tn(ta.data(), m, k, g, n)
                    };
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.iter().map(|v| c * v).collect()),
            Op::Tanh(x) => {
                self.accumulate(grads, *x, g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect())
            }
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect())
            }
            Op::Exp(x) => self.accumulate(grads, *x, g.iter().zip(out).map(|(g, y)| g * y).collect()),
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, g.iter().zip(xv).map(|(g, v)| g / v).collect())
            }
            Op::LayerNorm { x, inv_std } => {
                let c = node.value.cols();
                let mut gx = vec![0.0; g.len()];
                for (i, &s) in inv_std.iter().enumerate() {
                    let (gr, yr) = (&g[i * c..(i + 1) * c], &out[i * c..(i + 1) * c]);
                    let mean_g = gr.iter().sum::<f64>() / c as f64;
                    let mean_gy = dot(gr, yr) / c as f64;
                    for j in 0..c {
                        gx[i * c + j] = s * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::MeanRows(x) => {
                let t = self.value(*x);
                let (r, c) = (t.rows(), t.cols());
                let mut gx = vec![0.0; r * c];
                for row in gx.chunks_mut(c) {
                    for (o, gv) in row.iter_mut().zip(g) {
                        *o = gv / r as f64;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::L2NormalizeRows { x, scale, clamped } => {
                let c = node.value.cols();
                let mut gx = vec![0.0; g.len()];
                for i in 0..scale.len() {
                    let (gr, yr) = (&g[i * c..(i + 1) * c], &out[i * c..(i + 1) * c]);
                    let gy = if clamped[i] { 0.0 } else { dot(gr, yr) };
                    for j in 0..c {
                        gx[i * c + j] = scale[i] * (gr[j] - yr[j] * gy);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatRows(xs) => {
                let mut start = 0;
                for &x in xs {
                    let n = self.value(x).numel();
                    self.accumulate(grads, x, g[start..start + n].to_vec());
                    start += n;
                }
            }
            Op::GatherRows { x, idx } => {
                let t = self.value(*x);
                let c = t.cols();
                let mut gx = vec![0.0; t.numel()];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += g[k * c + j];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SparseMatMul { a, x } => {
                let d = node.value.cols();
                let gx = a.transpose().matmul_dense(g, d);
                self.accumulate(grads, *x, gx);
            }
            Op::LogSumExpRows { x, mask } => {
                let t = self.value(*x);
                let (r, c) = (t.rows(), t.cols());
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        if mask.as_ref().is_none_or(|m| m[i * c + j]) {
                            gx[i * c + j] = g[i] * (t.get(i, j) - out[i]).exp();
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
