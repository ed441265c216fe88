//! Reverse-mode differentiation over 2-D matrices.
//!
//! A [`Tape`] is an append-only list of [`DiffNode`]s. Every operation pushes
//! one node whose parents already live on the tape, so the storage order is a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Sparse operands (normalized adjacency, bag-of-words features, attention
//! patterns) are constants shared through `Arc`; gradients never flow into them.

use std::sync::Arc;

use super::dense::{softmax_in_place, DenseMatrix};
use super::sparse::SparseMatrixCSR;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    /// Parameter or constant input.
    Leaf,
    MatMul(Var, Var),
    /// Constant sparse matrix times a node.
    SpMM(Arc<SparseMatrixCSR>, Var),
    Add(Var, Var),
    /// `x + 1·bias` with `bias` a single row.
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    /// Elementwise product with a constant (dropout masks).
    Mask(Var, Arc<DenseMatrix>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    RowSoftmax(Var),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Arc<[usize]>,
        rows: Arc<[usize]>,
    },
    /// Per stored position `(i, j)` of the pattern: `left[i] + right[j]`, as an `nnz×1` column.
    EdgeScores {
        pattern: Arc<SparseMatrixCSR>,
        left: Var,
        right: Var,
    },
    /// Softmax of an `nnz×1` column within each pattern row.
    EdgeSoftmax {
        pattern: Arc<SparseMatrixCSR>,
        scores: Var,
    },
    /// `out[i] = Σ_(i,j) w_ij · h[j]` with weights given as an `nnz×1` column.
    EdgeAggregate {
        pattern: Arc<SparseMatrixCSR>,
        weights: Var,
        h: Var,
    },
}

impl Op {
    pub fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Hadamard(a, b) => vec![*a, *b],
            Op::SpMM(_, x)
            | Op::Scale(x, _)
            | Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Mask(x, _)
            | Op::SliceRows(x, _, _)
            | Op::RowSoftmax(x)
            | Op::Sum(x) => vec![*x],
            Op::ConcatCols(parts) => parts.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::EdgeScores { left, right, .. } => vec![*left, *right],
            Op::EdgeSoftmax { scores, .. } => vec![*scores],
            Op::EdgeAggregate { weights, h, .. } => vec![*weights, *h],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SpMM(..) => "spmm",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Hadamard(..) => "hadamard",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Mask(..) => "mask",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::RowSoftmax(..) => "row_softmax",
            Op::Sum(..) => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::EdgeScores { .. } => "edge_scores",
            Op::EdgeSoftmax { .. } => "edge_softmax",
            Op::EdgeAggregate { .. } => "edge_aggregate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiffNode {
    pub op: Op,
    pub value: DenseMatrix,
    pub requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<DiffNode>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `v`; zeros when `v` did not reach the loss.
    pub fn wrt(&self, v: Var) -> DenseMatrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }

    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads[v.0].as_ref()
    }

    /// Moves the gradient out, leaving zeros semantics for later `wrt` calls.
    pub fn take(&mut self, v: Var) -> DenseMatrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &DiffNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: DenseMatrix) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(DiffNode {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(DiffNode {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(DiffNode {
            op: Op::Leaf,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn spmm(&mut self, s: &Arc<SparseMatrixCSR>, x: Var) -> Result<Var> {
        let value = s.spmm(self.value(x))?;
        Ok(self.push(Op::SpMM(Arc::clone(s), x), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dims("add_row", xv.shape(), bv.shape()));
        }
        let mut value = xv.clone();
        let b = bv.row(0).to_vec();
        for r in 0..value.rows() {
            for (v, &bb) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bb;
            }
        }
        Ok(self.push(Op::AddRow(x, bias), value))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).scale(factor);
        self.push(Op::Scale(x, factor), value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), value)
    }

    /// `x` for `x > 0`, `slope·x` otherwise. The derivative at 0 is `slope`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu(x, slope), value)
    }

    pub fn mask(&mut self, x: Var, mask: Arc<DenseMatrix>) -> Result<Var> {
        let value = self.value(x).hadamard(&mask)?;
        Ok(self.push(Op::Mask(x, mask), value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let blocks: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = DenseMatrix::hcat(&blocks)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(x).slice_rows(start, end)?;
        Ok(self.push(Op::SliceRows(x, start, end), value))
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let value = self.value(x).row_softmax();
        self.push(Op::RowSoftmax(x), value)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value)
    }

    /// Mean over `rows` of `-log softmax(logits[r])[labels[r]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], rows: &[usize]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Contract("cross-entropy over an empty node set".into()));
        }
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(Error::dims("softmax_cross_entropy", lv.shape(), (labels.len(), 1)));
        }
        let mut total = 0.0;
        for &r in rows {
            let label = labels[r];
            if label >= lv.cols() {
                return Err(Error::Contract(format!(
                    "label {label} of node {r} outside [0, {})",
                    lv.cols()
                )));
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            total += log_norm - row[label];
        }
        let value = DenseMatrix::scalar(total / rows.len() as f64);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.into(),
                rows: rows.into(),
            },
            value,
        ))
    }

    pub fn edge_scores(&mut self, pattern: &Arc<SparseMatrixCSR>, left: Var, right: Var) -> Result<Var> {
        let (lv, rv) = (self.value(left), self.value(right));
        let n = pattern.rows();
        if lv.shape() != (n, 1) || rv.shape() != (pattern.cols(), 1) {
            return Err(Error::dims("edge_scores", lv.shape(), rv.shape()));
        }
        let mut out = Vec::with_capacity(pattern.nnz());
        for i in 0..n {
            let li = lv.data()[i];
            for (j, _) in pattern.row(i) {
                out.push(li + rv.data()[j]);
            }
        }
        let value = DenseMatrix::new(pattern.nnz(), 1, out)?;
        Ok(self.push(
            Op::EdgeScores {
                pattern: Arc::clone(pattern),
                left,
                right,
            },
            value,
        ))
    }

    pub fn edge_softmax(&mut self, pattern: &Arc<SparseMatrixCSR>, scores: Var) -> Result<Var> {
        let sv = self.value(scores);
        if sv.shape() != (pattern.nnz(), 1) {
            return Err(Error::dims("edge_softmax", sv.shape(), (pattern.nnz(), 1)));
        }
        let mut out = sv.clone();
        for i in 0..pattern.rows() {
            let range = pattern.row_range(i);
            if !range.is_empty() {
                softmax_in_place(&mut out.data_mut()[range]);
            }
        }
        Ok(self.push(
            Op::EdgeSoftmax {
                pattern: Arc::clone(pattern),
                scores,
            },
            out,
        ))
    }

    pub fn edge_aggregate(&mut self, pattern: &Arc<SparseMatrixCSR>, weights: Var, h: Var) -> Result<Var> {
        let (wv, hv) = (self.value(weights), self.value(h));
        if wv.shape() != (pattern.nnz(), 1) || hv.rows() != pattern.cols() {
            return Err(Error::dims("edge_aggregate", wv.shape(), hv.shape()));
        }
        let d = hv.cols();
        let mut out = DenseMatrix::zeros(pattern.rows(), d);
        for i in 0..pattern.rows() {
            let range = pattern.row_range(i);
            for pos in range {
                let j = pattern.col_idx()[pos];
                let w = wv.data()[pos];
                for (o, &x) in out.row_mut(i).iter_mut().zip(hv.row(j)) {
                    *o += w * x;
                }
            }
        }
        Ok(self.push(
            Op::EdgeAggregate {
                pattern: Arc::clone(pattern),
                weights,
                h,
            },
            out,
        ))
    }

    /// Reverse sweep from a `1×1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            for (parent, pg) in self.local_grads(node, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.axpy(1.0, &pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn local_grads(&self, node: &DiffNode, g: &DenseMatrix) -> Result<Vec<(Var, DenseMatrix)>> {
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if wants(a) {
                    out.push((*a, g.matmul_nt(self.value(*b))?));
                }
                if wants(b) {
                    out.push((*b, self.value(*a).matmul_tn(g)?));
                }
                out
            }
            Op::SpMM(s, x) => vec![(*x, s.spmm_transposed(g)?)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(x, bias) => {
                let mut col_sums = DenseMatrix::zeros(1, g.cols());
                for row in g.row_iter() {
                    for (s, &v) in col_sums.row_mut(0).iter_mut().zip(row) {
                        *s += v;
                    }
                }
                vec![(*x, g.clone()), (*bias, col_sums)]
            }
            Op::Hadamard(a, b) => vec![
                (*a, g.hadamard(self.value(*b))?),
                (*b, g.hadamard(self.value(*a))?),
            ],
            Op::Scale(x, f) => vec![(*x, g.scale(*f))],
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                for (dv, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                    if v <= 0.0 {
                        *dv = 0.0;
                    }
                }
                vec![(*x, d)]
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                for (dv, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                    if v <= 0.0 {
                        *dv *= slope;
                    }
                }
                vec![(*x, d)]
            }
            Op::Mask(x, m) => vec![(*x, g.hadamard(m)?)],
            Op::ConcatCols(parts) => {
                let mut start = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let width = self.value(*p).cols();
                    out.push((*p, g.slice_cols(start, start + width)?));
                    start += width;
                }
                out
            }
            Op::SliceRows(x, start, _) => {
                let xv = self.value(*x);
                let mut d = DenseMatrix::zeros(xv.rows(), xv.cols());
                let cols = xv.cols();
                d.data_mut()[start * cols..start * cols + g.data().len()].copy_from_slice(g.data());
                vec![(*x, d)]
            }
            Op::RowSoftmax(x) => {
                let y = &node.value;
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (k, dv) in d.row_mut(r).iter_mut().enumerate() {
                        *dv = yr[k] * (gr[k] - dot);
                    }
                }
                vec![(*x, d)]
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                vec![(*x, DenseMatrix::filled(r, c, g.data()[0]))]
            }
            Op::SoftmaxCrossEntropy { logits, labels, rows } => {
                let lv = self.value(*logits);
                let mut d = DenseMatrix::zeros(lv.rows(), lv.cols());
                let scale = g.data()[0] / rows.len() as f64;
                for &r in rows.iter() {
                    let mut p = lv.row(r).to_vec();
                    softmax_in_place(&mut p);
                    p[labels[r]] -= 1.0;
                    for (dv, pv) in d.row_mut(r).iter_mut().zip(p) {
                        *dv += scale * pv;
                    }
                }
                vec![(*logits, d)]
            }
            Op::EdgeScores { pattern, left, right } => {
                let mut dl = DenseMatrix::zeros(pattern.rows(), 1);
                let mut dr = DenseMatrix::zeros(pattern.cols(), 1);
                for i in 0..pattern.rows() {
                    for pos in pattern.row_range(i) {
                        let gv = g.data()[pos];
                        dl.data_mut()[i] += gv;
                        dr.data_mut()[pattern.col_idx()[pos]] += gv;
                    }
                }
                vec![(*left, dl), (*right, dr)]
            }
            Op::EdgeSoftmax { pattern, scores } => {
                let y = &node.value;
                let mut d = DenseMatrix::zeros(y.rows(), 1);
                for i in 0..pattern.rows() {
                    let range = pattern.row_range(i);
                    let dot: f64 = range.clone().map(|p| y.data()[p] * g.data()[p]).sum();
                    for p in range {
                        d.data_mut()[p] = y.data()[p] * (g.data()[p] - dot);
                    }
                }
                vec![(*scores, d)]
            }
            Op::EdgeAggregate { pattern, weights, h } => {
                let (wv, hv) = (self.value(*weights), self.value(*h));
                let mut dw = DenseMatrix::zeros(pattern.nnz(), 1);
                let mut dh = DenseMatrix::zeros(hv.rows(), hv.cols());
                for i in 0..pattern.rows() {
                    let gi = g.row(i);
                    for pos in pattern.row_range(i) {
                        let j = pattern.col_idx()[pos];
                        dw.data_mut()[pos] = gi.iter().zip(hv.row(j)).map(|(a, b)| a * b).sum();
                        let w = wv.data()[pos];
                        for (dv, &gv) in dh.row_mut(j).iter_mut().zip(gi) {
                            *dv += w * gv;
                        }
                    }
                }
                vec![(*weights, dw), (*h, dh)]
            }
        };
        Ok(out)
    }
}
