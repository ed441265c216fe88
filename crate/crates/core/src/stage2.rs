//! Second stage: two graph convolutions over the conceptual graph and a
//! softmax head producing the final class probabilities.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concept::ConceptualGraph;
use crate::error::{Error, Result};
use crate::layers::{dropout, fused_gcn_layer, gcn_layer, Activation, GcnLayerParams, GcnLayerVars, InputBlock, Mode, Parameters};
use crate::linalg::{DenseMatrix, SparseMatrixCSR, Tape, Var};
use crate::stage1::SoftPrediction;

/// `[X | H_high | P]`.
pub fn fuse_stage2(x: &DenseMatrix, high: &DenseMatrix, p: &SoftPrediction) -> Result<DenseMatrix> {
    DenseMatrix::hcat(&[x, high, p.matrix()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Model {
    pub gcn2_a: GcnLayerParams,
    pub gcn2_b: GcnLayerParams,
    pub head2: GcnLayerParams,
    pub negative_slope: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Stage2Vars {
    pub gcn2_a: GcnLayerVars,
    pub gcn2_b: GcnLayerVars,
    pub head2: GcnLayerVars,
    pub negative_slope: f64,
}

pub const STAGE2_PARAM_COUNT: usize = 6;

impl Stage2Vars {
    pub fn from_slice(v: &[Var], negative_slope: f64) -> Result<Self> {
        if v.len() != STAGE2_PARAM_COUNT {
            return Err(Error::Contract(format!(
                "stage-2 needs {STAGE2_PARAM_COUNT} parameter handles, got {}",
                v.len()
            )));
        }
        let gcn = |i: usize| GcnLayerVars {
            weight: v[i],
            bias: v[i + 1],
        };
        Ok(Self {
            gcn2_a: gcn(0),
            gcn2_b: gcn(2),
            head2: gcn(4),
            negative_slope,
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(STAGE2_PARAM_COUNT);
        out.extend(self.gcn2_a.vars());
        out.extend(self.gcn2_b.vars());
        out.extend(self.head2.vars());
        out
    }
}

impl Stage2Model {
    /// Input width is `feature_dim + high_dim + classes`.
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        high_dim: usize,
        hidden: usize,
        classes: usize,
        negative_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 || classes == 0 {
            return Err(Error::Config(format!(
                "stage-2 dimensions must be positive: hidden {hidden}, classes {classes}"
            )));
        }
        Ok(Self {
            gcn2_a: GcnLayerParams::glorot(feature_dim + high_dim + classes, hidden, rng),
            gcn2_b: GcnLayerParams::glorot(hidden, hidden, rng),
            head2: GcnLayerParams::glorot(hidden, classes, rng),
            negative_slope,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.gcn2_a.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head2.out_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> Stage2Vars {
        let vars: Vec<Var> = self
            .named_params()
            .into_iter()
            .map(|(_, m)| tape.param(m.clone()))
            .collect();
        Stage2Vars::from_slice(&vars, self.negative_slope).expect("named_params has the fixed layout")
    }
}

impl Parameters for Stage2Model {
    fn named_params(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::with_capacity(STAGE2_PARAM_COUNT);
        for (prefix, layer) in [("gcn2_a", &self.gcn2_a), ("gcn2_b", &self.gcn2_b), ("head2", &self.head2)] {
            out.push((format!("{prefix}.weight"), &layer.weight));
            out.push((format!("{prefix}.bias"), &layer.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = Vec::with_capacity(STAGE2_PARAM_COUNT);
        for layer in [&mut self.gcn2_a, &mut self.gcn2_b, &mut self.head2] {
            out.extend(layer.params_mut());
        }
        out
    }
}

/// Records the stage-2 stack on `tape` and returns the logits. The fused
/// input is passed as blocks so the sparse features stay sparse.
pub fn stage2_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &Stage2Vars,
    propagation: &Arc<SparseMatrixCSR>,
    fused: &[InputBlock],
    dropout_rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let act = Activation::LeakyRelu(vars.negative_slope);
    let h = fused_gcn_layer(tape, propagation, fused, &vars.gcn2_a, act)?;
    let h = dropout(tape, h, dropout_rate, mode, rng)?;
    let h = gcn_layer(tape, propagation, h, &vars.gcn2_b, act)?;
    let h = dropout(tape, h, dropout_rate, mode, rng)?;
    gcn_layer(tape, propagation, h, &vars.head2, Activation::Identity)
}

/// Row-stochastic `n × c` probabilities for a dense fused input.
pub fn stage2_forward<R: Rng + ?Sized>(
    model: &Stage2Model,
    concept: &ConceptualGraph,
    fused2: &DenseMatrix,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let input = tape.constant(fused2.clone());
    let propagation = Arc::new(concept.normalized.clone());
    let logits = stage2_tape(
        &mut tape,
        &vars,
        &propagation,
        &[InputBlock::Dense(input)],
        dropout_rate,
        mode,
        rng,
    )?;
    let logits = tape.value(logits);
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite stage-2 logits".into()));
    }
    Ok(logits.row_softmax())
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict(probs: &DenseMatrix) -> Result<Vec<usize>> {
    if probs.rows() == 0 || probs.cols() == 0 {
        return Err(Error::Contract(format!(
            "cannot predict from a {}x{} matrix",
            probs.rows(),
            probs.cols()
        )));
    }
    Ok(probs
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}
