//! Differentiable building blocks: graph convolution, split attention,
//! encoder, dropout and the masked classification loss.
//!
//! Parameters live in plain structs of [`DenseMatrix`]; `bind` registers them
//! on a [`Tape`] for one forward/backward pass and returns the matching
//! [`Var`] handles in the same order as `params_mut`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::linalg::{DenseMatrix, SparseMatrixCSR, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(slope) => tape.leaky_relu(x, slope),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Named parameter matrices in a fixed order.
pub trait Parameters {
    fn named_params(&self) -> Vec<(String, &DenseMatrix)>;
    fn params_mut(&mut self) -> Vec<&mut DenseMatrix>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.data().len()).sum()
    }
}

/// Constant sparse operands shared by every forward pass over one graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    /// Renormalized adjacency `D̃^(-1/2)(A+I)D̃^(-1/2)`.
    pub a_hat: Arc<SparseMatrixCSR>,
    /// Pattern of `A + I`, the attention neighbourhoods.
    pub closed: Arc<SparseMatrixCSR>,
    /// Node features, optionally row-normalized, stored sparse.
    pub features: Arc<SparseMatrixCSR>,
}

impl GraphContext {
    pub fn new(g: &AttributedGraph, normalize_features: bool) -> Self {
        let x = if normalize_features {
            g.row_normalized_features()
        } else {
            g.features().clone()
        };
        Self {
            a_hat: Arc::new(crate::graph::normalize_adjacency(g)),
            closed: closed_neighborhood(g),
            features: Arc::new(SparseMatrixCSR::from_dense(&x)),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.a_hat.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// One operand of a fused product: a constant sparse block or a tape node.
#[derive(Debug, Clone)]
pub enum InputBlock {
    Sparse(Arc<SparseMatrixCSR>),
    Dense(Var),
}

impl InputBlock {
    pub fn width(&self, tape: &Tape) -> usize {
        match self {
            InputBlock::Sparse(s) => s.cols(),
            InputBlock::Dense(v) => tape.shape(*v).1,
        }
    }

    pub fn rows(&self, tape: &Tape) -> usize {
        match self {
            InputBlock::Sparse(s) => s.rows(),
            InputBlock::Dense(v) => tape.shape(*v).0,
        }
    }

    /// `block · weight`.
    pub fn project(&self, tape: &mut Tape, weight: Var) -> Result<Var> {
        match self {
            InputBlock::Sparse(s) => tape.spmm(s, weight),
            InputBlock::Dense(v) => tape.matmul(*v, weight),
        }
    }
}

/// `[b₀ | b₁ | …] · W`, computed blockwise as `Σ bₖ · W[rowsₖ]` so a sparse
/// block never has to be densified.
pub fn fused_product(tape: &mut Tape, blocks: &[InputBlock], weight: Var) -> Result<Var> {
    let (w_rows, _) = tape.shape(weight);
    let total: usize = blocks.iter().map(|b| b.width(tape)).sum();
    if total != w_rows {
        let rows = blocks.first().map_or(0, |b| b.rows(tape));
        return Err(Error::dims("fused_product", (rows, total), tape.shape(weight)));
    }
    let mut acc: Option<Var> = None;
    let mut start = 0;
    for block in blocks {
        let width = block.width(tape);
        if width == 0 {
            continue;
        }
        let w = if width == w_rows {
            weight
        } else {
            tape.slice_rows(weight, start, start + width)?
        };
        let part = block.project(tape, w)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, part)?,
            None => part,
        });
        start += width;
    }
    acc.ok_or_else(|| Error::Contract("fused product over zero-width input".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayerParams {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

#[derive(Debug, Clone, Copy)]
pub struct GcnLayerVars {
    pub weight: Var,
    pub bias: Var,
}

impl GcnLayerParams {
    pub fn glorot<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            weight: DenseMatrix::glorot(d_in, d_out, rng),
            bias: DenseMatrix::zeros(1, d_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> GcnLayerVars {
        GcnLayerVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseMatrix)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut DenseMatrix>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

impl GcnLayerVars {
    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

impl Parameters for GcnLayerParams {
    fn named_params(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::new();
        self.push_named("gcn", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = Vec::new();
        self.push_mut(&mut out);
        out
    }
}

/// Graph convolution `act(Â · H · W + b)`.
pub fn gcn_layer(
    tape: &mut Tape,
    a_hat: &Arc<SparseMatrixCSR>,
    h: Var,
    p: &GcnLayerVars,
    activation: Activation,
) -> Result<Var> {
    fused_gcn_layer(tape, a_hat, &[InputBlock::Dense(h)], p, activation)
}

/// Graph convolution over a column-concatenated input given as blocks.
pub fn fused_gcn_layer(
    tape: &mut Tape,
    a_hat: &Arc<SparseMatrixCSR>,
    blocks: &[InputBlock],
    p: &GcnLayerVars,
    activation: Activation,
) -> Result<Var> {
    let hw = fused_product(tape, blocks, p.weight)?;
    let propagated = tape.spmm(a_hat, hw)?;
    let biased = tape.add_row(propagated, p.bias)?;
    Ok(activation.apply(tape, biased))
}

/// Split (additive) single-head attention parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub weight: DenseMatrix,
    pub att_left: DenseMatrix,
    pub att_right: DenseMatrix,
    pub negative_slope: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub weight: Var,
    pub att_left: Var,
    pub att_right: Var,
    pub negative_slope: f64,
}

impl AttentionVars {
    pub fn vars(&self) -> [Var; 3] {
        [self.weight, self.att_left, self.att_right]
    }
}

impl AttentionParams {
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, att_dim: usize, negative_slope: f64, rng: &mut R) -> Result<Self> {
        if !(negative_slope > 0.0) {
            return Err(Error::Config(format!("negative_slope must be positive, got {negative_slope}")));
        }
        Ok(Self {
            weight: DenseMatrix::glorot(in_dim, att_dim, rng),
            att_left: DenseMatrix::glorot(att_dim, 1, rng),
            att_right: DenseMatrix::glorot(att_dim, 1, rng),
            negative_slope,
        })
    }

    pub fn att_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> AttentionVars {
        AttentionVars {
            weight: tape.param(self.weight.clone()),
            att_left: tape.param(self.att_left.clone()),
            att_right: tape.param(self.att_right.clone()),
            negative_slope: self.negative_slope,
        }
    }
}

impl Parameters for AttentionParams {
    fn named_params(&self) -> Vec<(String, &DenseMatrix)> {
        vec![
            ("attention.weight".into(), &self.weight),
            ("attention.att_left".into(), &self.att_left),
            ("attention.att_right".into(), &self.att_right),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.weight, &mut self.att_left, &mut self.att_right]
    }
}

/// Stored positions of `A + I`: every node's closed neighbourhood.
pub fn closed_neighborhood(g: &AttributedGraph) -> Arc<SparseMatrixCSR> {
    Arc::new(g.adjacency().closed_pattern())
}

pub struct AttentionOutput {
    /// `n × d_att` attended embedding.
    pub output: Var,
    /// Attention weights as an `nnz × 1` column aligned with the pattern's storage.
    pub coefficients: Var,
}

/// Scores `e_ij = LeakyReLU(a_lᵀ h_i + a_rᵀ h_j)` with `h = W x`, softmax over
/// each closed neighbourhood, output `Σ_j α_ij h_j`.
pub fn attention_layer(
    tape: &mut Tape,
    pattern: &Arc<SparseMatrixCSR>,
    x: &InputBlock,
    p: &AttentionVars,
) -> Result<AttentionOutput> {
    let h = x.project(tape, p.weight)?;
    let left = tape.matmul(h, p.att_left)?;
    let right = tape.matmul(h, p.att_right)?;
    let raw = tape.edge_scores(pattern, left, right)?;
    let scores = tape.leaky_relu(raw, p.negative_slope);
    let coefficients = tape.edge_softmax(pattern, scores)?;
    let output = tape.edge_aggregate(pattern, coefficients, h)?;
    Ok(AttentionOutput { output, coefficients })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub weight: Var,
    pub bias: Var,
}

impl EncoderVars {
    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

impl EncoderParams {
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, code_dim: usize, rng: &mut R) -> Result<Self> {
        if code_dim == 0 {
            return Err(Error::Config("encoder code dimension must be positive".into()));
        }
        Ok(Self {
            weight: DenseMatrix::glorot(in_dim, code_dim, rng),
            bias: DenseMatrix::zeros(1, code_dim),
        })
    }

    pub fn code_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

impl Parameters for EncoderParams {
    fn named_params(&self) -> Vec<(String, &DenseMatrix)> {
        vec![
            ("encoder.weight".into(), &self.weight),
            ("encoder.bias".into(), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `relu(emb · W + b)`.
pub fn encoder(tape: &mut Tape, emb: Var, p: &EncoderVars) -> Result<Var> {
    let z = tape.matmul(emb, p.weight)?;
    let z = tape.add_row(z, p.bias)?;
    Ok(tape.relu(z))
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")))
    }
}

/// Inverted dropout: in train mode each entry survives with probability
/// `1 − rate` and is scaled by `1 / (1 − rate)`. Eval mode and `rate = 0`
/// return `h` itself.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, h: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(h);
    }
    let (r, c) = tape.shape(h);
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let data = (0..r * c)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mask = DenseMatrix::new(r, c, data)?;
    tape.mask(h, Arc::new(mask))
}

/// Mean cross-entropy of the rows selected by `mask`.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
    if mask.len() != labels.len() {
        return Err(Error::Contract(format!(
            "mask has {} entries for {} labels",
            mask.len(),
            labels.len()
        )));
    }
    let rows: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    tape.softmax_cross_entropy(logits, labels, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path_graph() -> AttributedGraph {
        AttributedGraph::from_edges(
            "p",
            DenseMatrix::zeros(2, 2),
            vec![0, 1],
            2,
            vec!["a".into(), "b".into()],
            &[(0, 1)],
        )
        .unwrap()
        .0
    }

    #[test]
    fn identity_propagation() {
        let mut t = Tape::new();
        let h = t.constant(DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 3.0]]).unwrap());
        let p = GcnLayerParams {
            weight: DenseMatrix::identity(2),
            bias: DenseMatrix::zeros(1, 2),
        };
        let vars = p.bind(&mut t);
        let a = Arc::new(SparseMatrixCSR::identity(2));
        let out = gcn_layer(&mut t, &a, h, &vars, Activation::Relu).unwrap();
        assert_eq!(t.value(out), t.value(h));
    }

    #[test]
    fn two_node_path_hand_evaluation() {
        let g = path_graph();
        let a = Arc::new(crate::graph::normalize_adjacency(&g));
        let mut t = Tape::new();
        let h = t.constant(DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap());
        let p = GcnLayerParams {
            weight: DenseMatrix::identity(2),
            bias: DenseMatrix::zeros(1, 2),
        };
        let vars = p.bind(&mut t);
        let out = gcn_layer(&mut t, &a, h, &vars, Activation::Identity).unwrap();
        assert_eq!(t.value(out), &DenseMatrix::filled(2, 2, 1.0));
    }

    #[test]
    fn gcn_shape_mismatch() {
        let mut t = Tape::new();
        let h = t.constant(DenseMatrix::zeros(2, 3));
        let vars = GcnLayerParams::glorot(2, 2, &mut ChaCha8Rng::seed_from_u64(0)).bind(&mut t);
        let a = Arc::new(SparseMatrixCSR::identity(2));
        assert!(matches!(
            gcn_layer(&mut t, &a, h, &vars, Activation::Relu),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let g = AttributedGraph::from_edges(
            "i",
            DenseMatrix::zeros(3, 2),
            vec![0, 0, 0],
            1,
            vec!["a".into(), "b".into(), "c".into()],
            &[(0, 1)],
        )
        .unwrap()
        .0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = AttentionParams::glorot(2, 3, 0.2, &mut rng).unwrap();
        let x = DenseMatrix::uniform(3, 2, -1.0, 1.0, &mut rng);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let vars = p.bind(&mut t);
        let pattern = closed_neighborhood(&g);
        let out = attention_layer(&mut t, &pattern, &InputBlock::Dense(xv), &vars).unwrap();
        let h = x.matmul(&p.weight).unwrap();
        assert_eq!(t.value(out.output).row(2), h.row(2));
    }

    #[test]
    fn zero_attention_vectors_average_the_neighbourhood() {
        let g = path_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = AttentionParams::glorot(2, 2, 0.2, &mut rng).unwrap();
        p.att_left = DenseMatrix::zeros(2, 1);
        p.att_right = DenseMatrix::zeros(2, 1);
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let vars = p.bind(&mut t);
        let out = attention_layer(&mut t, &closed_neighborhood(&g), &InputBlock::Dense(xv), &vars).unwrap();
        let h = x.matmul(&p.weight).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                let mean = 0.5 * (h.get(0, k) + h.get(1, k));
                assert!((t.value(out.output).get(i, k) - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_rejects_non_positive_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(AttentionParams::glorot(2, 2, 0.0, &mut rng).is_err());
    }

    #[test]
    fn encoder_identity() {
        let mut t = Tape::new();
        let emb = t.constant(DenseMatrix::from_rows(&[[0.5, 2.0], [1.0, 0.0]]).unwrap());
        let p = EncoderParams {
            weight: DenseMatrix::identity(2),
            bias: DenseMatrix::zeros(1, 2),
        };
        let vars = p.bind(&mut t);
        let code = encoder(&mut t, emb, &vars).unwrap();
        assert_eq!(t.value(code), t.value(emb));
    }

    #[test]
    fn encoder_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let emb = DenseMatrix::uniform(5, 4, -1.0, 1.0, &mut rng);
        let p = EncoderParams::glorot(4, 3, &mut rng).unwrap();
        let err = finite_diff_check(
            |t, w| {
                let e = t.constant(emb.clone());
                let b = t.constant(p.bias.clone());
                let code = encoder(t, e, &EncoderVars { weight: w, bias: b })?;
                let sq = t.hadamard(code, code)?;
                Ok(t.sum(sq))
            },
            &p.weight,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let h = t.constant(DenseMatrix::filled(3, 3, 2.0));
        assert_eq!(dropout(&mut t, h, 0.0, Mode::Train, &mut rng).unwrap(), h);
        assert_eq!(dropout(&mut t, h, 0.6, Mode::Eval, &mut rng).unwrap(), h);
        assert!(dropout(&mut t, h, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&mut t, h, -0.1, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut t = Tape::new();
        let h = t.constant(DenseMatrix::filled(1000, 100, 1.0));
        let out = dropout(&mut t, h, 0.4, Mode::Train, &mut rng).unwrap();
        let v = t.value(out);
        let zeros = v.data().iter().filter(|&&x| x == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.4).abs() <= 0.01, "{zeros}");
        let survivors: Vec<f64> = v.data().iter().copied().filter(|&x| x != 0.0).collect();
        let mean = survivors.iter().sum::<f64>() / survivors.len() as f64;
        assert!((mean / (1.0 / 0.6) - 1.0).abs() <= 0.02);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let mut t = Tape::new();
        let logits = t.param(DenseMatrix::zeros(4, 7));
        let loss = softmax_cross_entropy(&mut t, logits, &[0, 3, 6, 2], &[true; 4]).unwrap();
        assert!((t.value(loss).data()[0] - 7f64.ln()).abs() < 1e-12);
        assert!((7f64.ln() - 1.9459).abs() < 1e-4);
    }

    #[test]
    fn confident_logits_drive_loss_to_zero() {
        let labels = [1usize, 0, 2];
        let loss_at = |scale: f64| {
            let mut m = DenseMatrix::zeros(3, 3);
            for (i, &l) in labels.iter().enumerate() {
                m.set(i, l, scale);
            }
            let mut t = Tape::new();
            let x = t.param(m);
            let loss = softmax_cross_entropy(&mut t, x, &labels, &[true; 3]).unwrap();
            t.value(loss).data()[0]
        };
        let (l1, l10, l100) = (loss_at(1.0), loss_at(10.0), loss_at(100.0));
        assert!(l1 > l10 && l10 > l100);
        assert!(l100 < 1e-40);
    }

    #[test]
    fn empty_mask_is_a_contract_error() {
        let mut t = Tape::new();
        let x = t.param(DenseMatrix::zeros(2, 2));
        assert!(matches!(
            softmax_cross_entropy(&mut t, x, &[0, 1], &[false, false]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn fused_product_equals_concatenated_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sparse = SparseMatrixCSR::from_dense(&DenseMatrix::uniform(6, 4, -1.0, 1.0, &mut rng).map(|v| {
            if v > 0.3 {
                v
            } else {
                0.0
            }
        }));
        let dense = DenseMatrix::uniform(6, 3, -1.0, 1.0, &mut rng);
        let w = DenseMatrix::uniform(7, 2, -1.0, 1.0, &mut rng);
        let mut t = Tape::new();
        let dv = t.constant(dense.clone());
        let wv = t.param(w.clone());
        let out = fused_product(&mut t, &[InputBlock::Sparse(Arc::new(sparse.clone())), InputBlock::Dense(dv)], wv)
            .unwrap();
        let concat = DenseMatrix::hcat(&[&sparse.to_dense(), &dense]).unwrap();
        assert!(t.value(out).max_abs_diff(&concat.matmul(&w).unwrap()) < 1e-12);
    }
}
