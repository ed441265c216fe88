use rand::Rng;
use serde::{Deserialize, Serialize};

use super::engine::{rng_for, stream, train_epochs, Supervision};
use super::{MetricsLog, TrainConfig};
use crate::error::Result;
use crate::graph::{AttributedGraph, DataSplit};
use crate::layers::{
    dropout, fused_gcn_layer, gcn_layer, Activation, GcnLayerParams, GcnLayerVars, GraphContext, InputBlock, Mode,
    Parameters,
};
use crate::linalg::{DenseMatrix, Tape, Var};

/// Two-layer reference GCN: `Â · relu(Â X W₀ + b₀) · W₁ + b₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineGcn {
    pub layer1: GcnLayerParams,
    pub layer2: GcnLayerParams,
}

impl BaselineGcn {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            layer1: GcnLayerParams::glorot(feature_dim, hidden, rng),
            layer2: GcnLayerParams::glorot(hidden, classes, rng),
        }
    }

    fn bind(&self, tape: &mut Tape) -> [GcnLayerVars; 2] {
        [self.layer1.bind(tape), self.layer2.bind(tape)]
    }
}

impl Parameters for BaselineGcn {
    fn named_params(&self) -> Vec<(String, &DenseMatrix)> {
        vec![
            ("layer1.weight".into(), &self.layer1.weight),
            ("layer1.bias".into(), &self.layer1.bias),
            ("layer2.weight".into(), &self.layer2.weight),
            ("layer2.bias".into(), &self.layer2.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = self.layer1.params_mut();
        out.extend(self.layer2.params_mut());
        out
    }
}

fn baseline_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &[GcnLayerVars; 2],
    ctx: &GraphContext,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let x = [InputBlock::Sparse(ctx.features.clone())];
    let h = fused_gcn_layer(tape, &ctx.a_hat, &x, &vars[0], Activation::Relu)?;
    let h = dropout(tape, h, dropout_rate, mode, rng)?;
    gcn_layer(tape, &ctx.a_hat, h, &vars[1], Activation::Identity)
}

pub fn baseline_probabilities(model: &BaselineGcn, ctx: &GraphContext) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let logits = baseline_tape(&mut tape, &vars, ctx, 0.0, Mode::Eval, &mut rng_for(0, stream::TRAIN))?;
    Ok(tape.value(logits).row_softmax())
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub model: BaselineGcn,
    pub metrics: MetricsLog,
    pub probs: DenseMatrix,
}

/// Trains the reference GCN for `config.epochs` epochs with the pipeline's optimizer.
pub fn train_baseline_gcn(config: &TrainConfig, g: &AttributedGraph, split: &DataSplit) -> Result<BaselineRun> {
    config.validate()?;
    split.validate(g)?;
    let ctx = GraphContext::new(g, config.normalize_features);
    let mut model = BaselineGcn::new(
        g.num_features(),
        config.hidden,
        g.class_count(),
        &mut rng_for(config.seed, stream::INIT),
    );
    let mut rng = rng_for(config.seed, stream::TRAIN);
    let mut metrics = MetricsLog::new();
    let sup = Supervision {
        config,
        labels: g.labels(),
        split,
    };
    train_epochs(&mut model, &sup, 1..=config.epochs, &mut rng, &mut metrics, |model, tape, mode, rng| {
        let vars = model.bind(tape);
        let logits = baseline_tape(tape, &vars, &ctx, config.dropout, mode, rng)?;
        Ok((vars.iter().flat_map(|v| v.vars()).collect(), logits))
    })?;
    let probs = baseline_probabilities(&model, &ctx)?;
    Ok(BaselineRun { model, metrics, probs })
}
