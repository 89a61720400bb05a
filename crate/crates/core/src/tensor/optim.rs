//! Plain SGD and the step-decay learning-rate schedule.

use super::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Step-decay schedule: `lr(i) = base_lr / decay_factor^floor(i / (decay_every_frac · total_iters))`.
///
/// Defaults divide by 10 after every 40% of the run, so with 1000 iterations
/// lr is 0.02 on [0,400), 0.002 on [400,800), 0.0002 on [800,1000).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_iters: usize,
    pub decay_factor: f64,
    pub decay_every_frac: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_iters: usize) -> Self {
        LrSchedule { base_lr, total_iters, decay_factor: 10.0, decay_every_frac: 0.4 }
    }

    pub fn with(
        base_lr: f64,
        total_iters: usize,
        decay_factor: f64,
        decay_every_frac: f64,
    ) -> Result<Self> {
        if base_lr < 0.0 || !base_lr.is_finite() {
            return Err(Error::InvalidArg(format!("base_lr must be >= 0, got {base_lr}")));
        }
        if decay_factor < 1.0 {
            return Err(Error::InvalidArg(format!(
                "decay_factor must be >= 1, got {decay_factor}"
            )));
        }
        if !(decay_every_frac > 0.0 && decay_every_frac <= 1.0) {
            return Err(Error::InvalidArg(format!(
                "decay_every_frac must be in (0, 1], got {decay_every_frac}"
            )));
        }
        Ok(LrSchedule { base_lr, total_iters, decay_factor, decay_every_frac })
    }

    /// Learning rate at iteration `i` (0-based).
    pub fn lr(&self, i: usize) -> f64 {
        let step = self.decay_every_frac * self.total_iters as f64;
        // A fractional step width within float noise of an integer is treated
        // as that integer so band edges land exactly on iteration indices.
        let k = if step >= 1.0 && (step - step.round()).abs() < 1e-9 * step {
            (i / step.round() as usize) as i32
        } else if step > 0.0 {
            (i as f64 / step).floor() as i32
        } else {
            0
        };
        self.base_lr / self.decay_factor.powi(k)
    }
}

/// In-place `θ ← θ − lr·g` over flat slices.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "sgd_step: {} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    if lr < 0.0 {
        return Err(Error::InvalidArg(format!("sgd_step: lr must be >= 0, got {lr}")));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// In-place SGD update of a tensor.
pub fn sgd_update(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        let (pr, pc) = param.shape();
        let (gr, gc) = grad.shape();
        return Err(Error::Shape(format!("sgd_update: {pr}x{pc} param vs {gr}x{gc} grad")));
    }
    sgd_step(param.data_mut(), grad.data(), lr)
}
