use super::dense::DenseMatrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central finite
/// differences at `point`.
///
/// `f` receives a fresh tape and the point registered as a parameter, and must
/// return a `1×1` node. The result is `max |a − n| / max(|a|, |n|, 1e-8)` over
/// all entries, with `a` analytic and `n` numeric.
pub fn finite_diff_check<F>(f: F, point: &DenseMatrix, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let loss = f(&mut tape, x)?;
    let analytic = tape.backward(loss)?.wrt(x);

    let eval = |p: DenseMatrix| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.param(p);
        let out = f(&mut tape, x)?;
        let v = tape.value(out);
        if v.shape() != (1, 1) {
            return Err(Error::Contract("finite_diff_check needs a scalar function".into()));
        }
        let v = v.data()[0];
        if !v.is_finite() {
            return Err(Error::Numeric("function is not finite at a perturbed point".into()));
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    for k in 0..point.data().len() {
        let mut plus = point.clone();
        plus.data_mut()[k] += epsilon;
        let mut minus = point.clone();
        minus.data_mut()[k] -= epsilon;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * epsilon);
        let a = analytic.data()[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
