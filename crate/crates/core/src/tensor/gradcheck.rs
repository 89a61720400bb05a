//! Finite-difference gradient checking.
//!
//! Central differences with a caller-supplied scalar function; this module
//! never touches the tape, so tests can use it as an independent oracle for
//! the analytic gradients.

use super::Tensor;
use crate::error::Result;

/// Central-difference gradients of `f` w.r.t. every entry of every input,
/// with step `h`.
pub fn finite_diff<F>(mut f: F, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut grads = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for pi in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[pi].rows(), inputs[pi].cols());
        for e in 0..inputs[pi].len() {
            let orig = work[pi].data()[e];
            work[pi].data_mut()[e] = orig + h;
            let up = f(&work)?;
            work[pi].data_mut()[e] = orig - h;
            let down = f(&work)?;
            work[pi].data_mut()[e] = orig;
            g.data_mut()[e] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Max over entries of `|a − n| / max(floor, |a|, |n|)`.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "max_rel_err on mismatched shapes");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / floor.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}
