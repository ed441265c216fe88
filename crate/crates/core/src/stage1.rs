//! First stage: attention and encoder over the raw features, fusion, two
//! graph convolutions producing high-level features, and a softmax head whose
//! output is kept as a distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    attention_layer, dropout, encoder, fused_gcn_layer, gcn_layer, Activation, AttentionParams, AttentionVars,
    EncoderParams, EncoderVars, GcnLayerParams, GcnLayerVars, GraphContext, InputBlock, Mode, Parameters,
};
use crate::linalg::{DenseMatrix, Tape, Var};

/// Row-stochastic `n × c` class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseMatrix", into = "DenseMatrix")]
pub struct SoftPrediction(DenseMatrix);

pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

impl SoftPrediction {
    pub fn new(p: DenseMatrix) -> Result<Self> {
        if p.cols() == 0 {
            return Err(Error::Contract("soft prediction with zero classes".into()));
        }
        for (i, row) in p.row_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Contract(format!("row {i} has entry {v} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Contract(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self(p))
    }

    pub fn from_logits(logits: &DenseMatrix) -> Result<Self> {
        if !logits.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Self::new(logits.row_softmax())
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn num_nodes(&self) -> usize {
        self.0.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

impl TryFrom<DenseMatrix> for SoftPrediction {
    type Error = Error;

    fn try_from(p: DenseMatrix) -> Result<Self> {
        Self::new(p)
    }
}

impl From<SoftPrediction> for DenseMatrix {
    fn from(p: SoftPrediction) -> Self {
        p.0
    }
}

/// `[X | code | emb]`.
pub fn fuse_inputs(x: &DenseMatrix, code: &DenseMatrix, emb: &DenseMatrix) -> Result<DenseMatrix> {
    DenseMatrix::hcat(&[x, code, emb])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Model {
    pub attention: AttentionParams,
    pub encoder: EncoderParams,
    pub gcn1_a: GcnLayerParams,
    pub gcn1_b: GcnLayerParams,
    pub head1: GcnLayerParams,
    pub negative_slope: f64,
}

/// Tape handles for one bound [`Stage1Model`].
#[derive(Debug, Clone, Copy)]
pub struct Stage1Vars {
    pub attention: AttentionVars,
    pub encoder: EncoderVars,
    pub gcn1_a: GcnLayerVars,
    pub gcn1_b: GcnLayerVars,
    pub head1: GcnLayerVars,
}

pub const STAGE1_PARAM_COUNT: usize = 11;

impl Stage1Vars {
    /// Rebuilds the handles from a list in `params_mut` order.
    pub fn from_slice(v: &[Var], negative_slope: f64) -> Result<Self> {
        if v.len() != STAGE1_PARAM_COUNT {
            return Err(Error::Contract(format!(
                "stage-1 needs {STAGE1_PARAM_COUNT} parameter handles, got {}",
                v.len()
            )));
        }
        let gcn = |i: usize| GcnLayerVars {
            weight: v[i],
            bias: v[i + 1],
        };
        Ok(Self {
            attention: AttentionVars {
                weight: v[0],
                att_left: v[1],
                att_right: v[2],
                negative_slope,
            },
            encoder: EncoderVars {
                weight: v[3],
                bias: v[4],
            },
            gcn1_a: gcn(5),
            gcn1_b: gcn(7),
            head1: gcn(9),
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(STAGE1_PARAM_COUNT);
        out.extend(self.attention.vars());
        out.extend(self.encoder.vars());
        out.extend(self.gcn1_a.vars());
        out.extend(self.gcn1_b.vars());
        out.extend(self.head1.vars());
        out
    }
}

impl Stage1Model {
    /// Glorot-initialized model with attention and code widths equal to `hidden`.
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        hidden: usize,
        classes: usize,
        negative_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if feature_dim == 0 || hidden == 0 || classes == 0 {
            return Err(Error::Config(format!(
                "stage-1 dimensions must be positive: features {feature_dim}, hidden {hidden}, classes {classes}"
            )));
        }
        let attention = AttentionParams::glorot(feature_dim, hidden, negative_slope, rng)?;
        let encoder = EncoderParams::glorot(hidden, hidden, rng)?;
        let fused = feature_dim + encoder.code_dim() + attention.att_dim();
        Ok(Self {
            attention,
            encoder,
            gcn1_a: GcnLayerParams::glorot(fused, hidden, rng),
            gcn1_b: GcnLayerParams::glorot(hidden, hidden, rng),
            head1: GcnLayerParams::glorot(hidden, classes, rng),
            negative_slope,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.attention.weight.rows()
    }

    pub fn fused_dim(&self) -> usize {
        self.gcn1_a.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gcn1_b.out_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head1.out_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> Stage1Vars {
        let vars: Vec<Var> = self
            .named_params()
            .into_iter()
            .map(|(_, m)| tape.param(m.clone()))
            .collect();
        Stage1Vars::from_slice(&vars, self.negative_slope).expect("named_params has the fixed layout")
    }

    /// Checks the dimension chain `m + z + d_att → hidden → hidden → c`.
    pub fn validate(&self) -> Result<()> {
        let m = self.feature_dim();
        let d_att = self.attention.att_dim();
        let z = self.encoder.code_dim();
        let chain = [
            ("encoder input", self.encoder.weight.rows(), d_att),
            ("gcn1_a input", self.gcn1_a.in_dim(), m + z + d_att),
            ("gcn1_b input", self.gcn1_b.in_dim(), self.gcn1_a.out_dim()),
            ("head1 input", self.head1.in_dim(), self.gcn1_b.out_dim()),
        ];
        for (what, got, want) in chain {
            if got != want {
                return Err(Error::Contract(format!("stage-1 {what} is {got}, expected {want}")));
            }
        }
        Ok(())
    }
}

impl Parameters for Stage1Model {
    fn named_params(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::with_capacity(STAGE1_PARAM_COUNT);
        out.extend(self.attention.named_params());
        out.extend(self.encoder.named_params());
        for (prefix, layer) in [("gcn1_a", &self.gcn1_a), ("gcn1_b", &self.gcn1_b), ("head1", &self.head1)] {
            out.push((format!("{prefix}.weight"), &layer.weight));
            out.push((format!("{prefix}.bias"), &layer.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = self.attention.params_mut();
        out.extend(self.encoder.params_mut());
        for layer in [&mut self.gcn1_a, &mut self.gcn1_b, &mut self.head1] {
            out.extend(layer.params_mut());
        }
        out
    }
}

/// Tape nodes produced by one stage-1 pass.
#[derive(Debug, Clone, Copy)]
pub struct Stage1Nodes {
    pub emb: Var,
    pub code: Var,
    pub high: Var,
    pub logits: Var,
}

/// Records the stage-1 stack on `tape`. Dropout sits after each graph convolution.
pub fn stage1_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &Stage1Vars,
    ctx: &GraphContext,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Stage1Nodes> {
    let slope = vars.attention.negative_slope;
    let x = InputBlock::Sparse(ctx.features.clone());
    let emb = attention_layer(tape, &ctx.closed, &x, &vars.attention)?.output;
    let code = encoder(tape, emb, &vars.encoder)?;
    let fused = [x, InputBlock::Dense(code), InputBlock::Dense(emb)];
    let h1 = fused_gcn_layer(tape, &ctx.a_hat, &fused, &vars.gcn1_a, Activation::LeakyRelu(slope))?;
    let h1 = dropout(tape, h1, dropout_rate, mode, rng)?;
    let high = gcn_layer(tape, &ctx.a_hat, h1, &vars.gcn1_b, Activation::LeakyRelu(slope))?;
    let dropped = dropout(tape, high, dropout_rate, mode, rng)?;
    let logits = gcn_layer(tape, &ctx.a_hat, dropped, &vars.head1, Activation::Identity)?;
    Ok(Stage1Nodes { emb, code, high, logits })
}

/// What stage 1 hands on: features and a class distribution, never a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Output {
    pub high: DenseMatrix,
    pub soft: SoftPrediction,
}

pub fn stage1_forward<R: Rng + ?Sized>(
    model: &Stage1Model,
    ctx: &GraphContext,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Stage1Output> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let nodes = stage1_tape(&mut tape, &vars, ctx, dropout_rate, mode, rng)?;
    Ok(Stage1Output {
        high: tape.value(nodes.high).clone(),
        soft: SoftPrediction::from_logits(tape.value(nodes.logits))?,
    })
}
