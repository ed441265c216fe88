use std::ops::RangeInclusive;
use std::time::Instant;

use log::debug;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{evaluate, sgd_momentum_step, EpochRecord, MetricsLog, OptimizerState, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::DataSplit;
use crate::layers::{Mode, Parameters};
use crate::linalg::{DenseMatrix, Tape, Var};

/// Seeded generator streams of one run.
pub(crate) mod stream {
    pub const INIT: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const CONCEPT: u64 = 2;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) struct Supervision<'a> {
    pub config: &'a TrainConfig,
    pub labels: &'a [usize],
    pub split: &'a DataSplit,
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub(crate) fn clip_global_norm(grads: &mut [DenseMatrix], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
    norm
}

/// Mini-batch SGD over the labelled training nodes for the given epoch numbers.
///
/// The learning rate follows one schedule over the whole run: epoch `e` uses
/// `learning_rate · gammaᵉ⁻¹`, whichever phase it belongs to.
///
/// `forward` binds the model on a fresh tape and returns its parameter handles
/// (in `params_mut` order) and the full-graph logits. Every step runs the whole
/// graph; the batch only selects which rows enter the loss.
pub(crate) fn train_epochs<M, F>(
    model: &mut M,
    sup: &Supervision<'_>,
    epochs: RangeInclusive<usize>,
    rng: &mut ChaCha8Rng,
    log: &mut MetricsLog,
    mut forward: F,
) -> Result<()>
where
    M: Parameters,
    F: FnMut(&M, &mut Tape, Mode, &mut ChaCha8Rng) -> Result<(Vec<Var>, Var)>,
{
    let config = sup.config;
    let weight_decay = config.weight_decay()?;
    let first = (*epochs.start()).max(1);
    let start_lr = config.learning_rate * config.gamma.powi((first - 1) as i32);
    let mut state = OptimizerState::new(model, start_lr);
    let mut order = sup.split.train_indices();
    let val = sup.split.val_indices();
    if order.is_empty() || val.is_empty() {
        return Err(Error::Split("training needs non-empty train and validation sets".into()));
    }
    for epoch in epochs {
        let start = Instant::now();
        if config.shuffle {
            order.shuffle(rng);
        }
        let lr = state.current_lr;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            let mut tape = Tape::new();
            let (vars, logits) = forward(model, &mut tape, Mode::Train, rng)?;
            let loss = tape.softmax_cross_entropy(logits, sup.labels, &batch)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::Numeric(format!("training loss is {value} at epoch {epoch}")));
            }
            let mut grads = tape.backward(loss)?;
            let mut grads: Vec<DenseMatrix> = vars.iter().map(|&v| grads.take(v)).collect();
            if let Some(max_norm) = config.grad_clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            sgd_momentum_step(&mut model.params_mut(), &grads, &mut state, lr, config.momentum, weight_decay)?;
            loss_sum += value;
            batches += 1;
        }

        let mut tape = Tape::new();
        let (_, logits) = forward(model, &mut tape, Mode::Eval, rng)?;
        let val_loss = tape.softmax_cross_entropy(logits, sup.labels, &val)?;
        let val_loss = tape.value(val_loss).get(0, 0);
        let logits = tape.value(logits);
        if !logits.is_finite() {
            return Err(Error::Numeric(format!("non-finite logits after epoch {epoch}")));
        }
        let probs = logits.row_softmax();
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            train_acc: evaluate(&probs, sup.labels, &sup.split.train_mask)?,
            val_acc: evaluate(&probs, sup.labels, &sup.split.val_mask)?,
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        debug!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            record.train_loss, record.train_acc, record.val_loss, record.val_acc
        );
        log.push(record)?;
        state.current_lr *= config.gamma;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_rescales_jointly() {
        let mut grads = vec![
            DenseMatrix::from_rows(&[[3.0, 0.0]]).unwrap(),
            DenseMatrix::from_rows(&[[0.0], [4.0]]).unwrap(),
        ];
        assert_eq!(clip_global_norm(&mut grads, 1.0), 5.0);
        assert!((grads[0].get(0, 0) - 0.6).abs() < 1e-15 && grads[0].get(0, 1) == 0.0);
        assert!((grads[1].get(1, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn small_gradients_pass_through() {
        let mut grads = vec![DenseMatrix::from_rows(&[[0.3, -0.4]]).unwrap()];
        assert_eq!(clip_global_norm(&mut grads, 1.0), 0.5);
        assert_eq!(grads[0].data(), &[0.3, -0.4]);
    }
}
