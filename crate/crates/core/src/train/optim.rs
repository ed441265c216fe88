use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Parameters;
use crate::linalg::DenseMatrix;

/// Momentum buffers, one per parameter matrix, and the current step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub velocity: Vec<DenseMatrix>,
    pub current_lr: f64,
}

impl OptimizerState {
    pub fn new<M: Parameters + ?Sized>(model: &M, learning_rate: f64) -> Self {
        Self {
            velocity: model
                .named_params()
                .iter()
                .map(|(_, p)| DenseMatrix::zeros(p.rows(), p.cols()))
                .collect(),
            current_lr: learning_rate,
        }
    }
}

/// `v ← μ·v − lr·(g + wd·w)`, then `w ← w + v`.
pub fn sgd_momentum_step(
    params: &mut [&mut DenseMatrix],
    grads: &[DenseMatrix],
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Contract(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((w, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        if w.shape() != g.shape() {
            return Err(Error::dims("sgd_momentum_step", w.shape(), g.shape()));
        }
        if w.shape() != v.shape() {
            return Err(Error::dims("sgd_momentum_step velocity", w.shape(), v.shape()));
        }
        for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi - lr * (gi + weight_decay * *wi);
            *wi += *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_for(w: &DenseMatrix) -> OptimizerState {
        OptimizerState {
            velocity: vec![DenseMatrix::zeros(w.rows(), w.cols())],
            current_lr: 0.1,
        }
    }

    #[test]
    fn plain_gradient_step() {
        let mut w = DenseMatrix::from_rows(&[[1.0, -2.0]]).unwrap();
        let g = DenseMatrix::from_rows(&[[0.5, 1.0]]).unwrap();
        let mut s = state_for(&w);
        sgd_momentum_step(&mut [&mut w], &[g], &mut s, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(w.data(), &[1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut w = DenseMatrix::from_rows(&[[3.0]]).unwrap();
        let mut s = state_for(&w);
        sgd_momentum_step(&mut [&mut w], &[DenseMatrix::zeros(1, 1)], &mut s, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(w.data(), &[3.0]);
    }

    #[test]
    fn quadratic_recurrence() {
        // f(w) = w², g = 2w. By hand: v1 = -0.2, w1 = 0.8; v2 = -0.18 - 0.16 = -0.34, w2 = 0.46
        let mut w = DenseMatrix::from_rows(&[[1.0]]).unwrap();
        let mut s = state_for(&w);
        let mut seen = Vec::new();
        for _ in 0..2 {
            let g = w.scale(2.0);
            sgd_momentum_step(&mut [&mut w], &[g], &mut s, 0.1, 0.9, 0.0).unwrap();
            seen.push(w.get(0, 0));
        }
        assert!((seen[0] - 0.8).abs() < 1e-15);
        assert!((seen[1] - 0.46).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut w = DenseMatrix::from_rows(&[[2.0]]).unwrap();
        let mut s = state_for(&w);
        sgd_momentum_step(&mut [&mut w], &[DenseMatrix::zeros(1, 1)], &mut s, 0.1, 0.0, 0.5).unwrap();
        assert!((w.get(0, 0) - 1.9).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut w = DenseMatrix::zeros(2, 2);
        let mut s = state_for(&w);
        let r = sgd_momentum_step(&mut [&mut w], &[DenseMatrix::zeros(1, 2)], &mut s, 0.1, 0.9, 0.0);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
