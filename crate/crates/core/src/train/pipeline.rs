use std::sync::Arc;

use log::info;
use rand_chacha::ChaCha8Rng;

use super::engine::{rng_for, stream, train_epochs, Supervision};
use super::{MetricsLog, TrainConfig};
use crate::concept::{build_conceptual_graph, ConceptualGraph};
use crate::error::Result;
use crate::graph::{AttributedGraph, DataSplit};
use crate::layers::{GraphContext, InputBlock, Mode, Parameters};
use crate::linalg::{DenseMatrix, SparseMatrixCSR, Tape, Var};
use crate::stage1::{stage1_forward, stage1_tape, SoftPrediction, Stage1Model, Stage1Output};
use crate::stage2::{stage2_tape, Stage2Model, Stage2Vars};

/// Everything a finished pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub stage1: Stage1Model,
    pub concept: ConceptualGraph,
    /// The soft predictions the conceptual graph was built from.
    pub concept_soft: SoftPrediction,
    pub stage2: Stage2Model,
    pub metrics: MetricsLog,
    /// Eval-mode stage-1 output of the final model.
    pub stage1_output: Stage1Output,
    /// Eval-mode stage-2 probabilities of the final model.
    pub probs: DenseMatrix,
}

struct Joint {
    stage1: Stage1Model,
    stage2: Stage2Model,
}

impl Parameters for Joint {
    fn named_params(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = self.stage1.named_params();
        out.extend(self.stage2.named_params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = self.stage1.params_mut();
        out.extend(self.stage2.params_mut());
        out
    }
}

fn stage2_on_tape(
    tape: &mut Tape,
    model: &Stage2Model,
    propagation: &Arc<SparseMatrixCSR>,
    features: &Arc<SparseMatrixCSR>,
    high: Var,
    soft: Var,
    dropout: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Stage2Vars, Var)> {
    let vars = model.bind(tape);
    let blocks = [
        InputBlock::Sparse(features.clone()),
        InputBlock::Dense(high),
        InputBlock::Dense(soft),
    ];
    let logits = stage2_tape(tape, &vars, propagation, &blocks, dropout, mode, rng)?;
    Ok((vars, logits))
}

/// Stage-2 probabilities for a stage-1 output, in eval mode.
pub fn stage2_probabilities(
    model: &Stage2Model,
    concept: &ConceptualGraph,
    ctx: &GraphContext,
    input: &Stage1Output,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let propagation = Arc::new(concept.normalized.clone());
    let high = tape.constant(input.high.clone());
    let soft = tape.constant(input.soft.matrix().clone());
    let mut unused = rng_for(0, stream::TRAIN);
    let (_, logits) = stage2_on_tape(
        &mut tape,
        model,
        &propagation,
        &ctx.features,
        high,
        soft,
        0.0,
        Mode::Eval,
        &mut unused,
    )?;
    Ok(SoftPrediction::from_logits(tape.value(logits))?.into_matrix())
}

/// Eval-mode inference through both stages with a fixed conceptual graph.
pub fn pipeline_inference(
    stage1: &Stage1Model,
    stage2: &Stage2Model,
    concept: &ConceptualGraph,
    ctx: &GraphContext,
) -> Result<(Stage1Output, DenseMatrix)> {
    let mut unused = rng_for(0, stream::TRAIN);
    let out = stage1_forward(stage1, ctx, 0.0, Mode::Eval, &mut unused)?;
    let probs = stage2_probabilities(stage2, concept, ctx, &out)?;
    Ok((out, probs))
}

/// Two-phase training: stage 1 alone, then the conceptual graph is built from
/// its soft predictions and stage 2 is trained on top.
pub fn train_pipeline(config: &TrainConfig, g: &AttributedGraph, split: &DataSplit) -> Result<PipelineRun> {
    config.validate()?;
    split.validate(g)?;
    let ctx = GraphContext::new(g, config.normalize_features);
    let (m, c) = (g.num_features(), g.class_count());

    let mut init = rng_for(config.seed, stream::INIT);
    let mut stage1 = Stage1Model::new(m, config.hidden, c, config.negative_slope, &mut init)?;
    let mut stage2 = Stage2Model::new(m, config.hidden, config.hidden, c, config.negative_slope, &mut init)?;

    let mut rng = rng_for(config.seed, stream::TRAIN);
    let mut metrics = MetricsLog::new();
    let sup = Supervision {
        config,
        labels: g.labels(),
        split,
    };
    let phase1 = config.phase1_epochs();

    info!("phase A: stage 1 for {phase1} epochs");
    train_epochs(&mut stage1, &sup, 1..=phase1, &mut rng, &mut metrics, |model, tape, mode, rng| {
        let vars = model.bind(tape);
        let nodes = stage1_tape(tape, &vars, &ctx, config.dropout, mode, rng)?;
        Ok((vars.vars(), nodes.logits))
    })?;

    let mut concept_rng = rng_for(config.seed, stream::CONCEPT);
    let concept_mode = if config.stochastic_concept_pass {
        Mode::Train
    } else {
        Mode::Eval
    };
    let concept_pass = stage1_forward(&stage1, &ctx, config.dropout, concept_mode, &mut concept_rng)?;
    let concept = build_conceptual_graph(&concept_pass.soft, &config.concept_params(), Some(g.adjacency()))?;
    info!(
        "conceptual graph: {} weighted edges over {} nodes",
        concept.weighted_edges().len(),
        concept.num_nodes()
    );
    let stage2_input = if config.stochastic_concept_pass {
        stage1_forward(&stage1, &ctx, 0.0, Mode::Eval, &mut concept_rng)?
    } else {
        concept_pass.clone()
    };
    let propagation = Arc::new(concept.normalized.clone());
    let phase2 = phase1 + 1..=config.epochs;

    info!("phase B: stage 2 for {} epochs", config.epochs - phase1);
    if config.joint_finetune {
        let mut joint = Joint { stage1, stage2 };
        train_epochs(&mut joint, &sup, phase2, &mut rng, &mut metrics, |model, tape, mode, rng| {
            let s1 = model.stage1.bind(tape);
            let nodes = stage1_tape(tape, &s1, &ctx, config.dropout, mode, rng)?;
            let soft = tape.row_softmax(nodes.logits);
            let (s2, logits) = stage2_on_tape(
                tape,
                &model.stage2,
                &propagation,
                &ctx.features,
                nodes.high,
                soft,
                config.dropout,
                mode,
                rng,
            )?;
            let mut vars = s1.vars();
            vars.extend(s2.vars());
            Ok((vars, logits))
        })?;
        stage1 = joint.stage1;
        stage2 = joint.stage2;
    } else {
        let high = stage2_input.high.clone();
        let soft = stage2_input.soft.matrix().clone();
        train_epochs(&mut stage2, &sup, phase2, &mut rng, &mut metrics, |model, tape, mode, rng| {
            let h = tape.constant(high.clone());
            let p = tape.constant(soft.clone());
            let (vars, logits) =
                stage2_on_tape(tape, model, &propagation, &ctx.features, h, p, config.dropout, mode, rng)?;
            Ok((vars.vars(), logits))
        })?;
    }

    let (stage1_output, probs) = pipeline_inference(&stage1, &stage2, &concept, &ctx)?;
    Ok(PipelineRun {
        stage1,
        concept,
        concept_soft: concept_pass.soft,
        stage2,
        metrics,
        stage1_output,
        probs,
    })
}
