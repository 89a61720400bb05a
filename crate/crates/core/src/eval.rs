//! Model evaluation helpers.

use crate::error::Result;
use crate::network::Model;
use crate::tensor::{self, Target, Tensor};
use serde::Serialize;

/// Classification accuracy by argmax over logits. Ties go to the lower
/// class index, matching the deterministic argmax used everywhere else.
pub fn accuracy(model: &Model, x: &Tensor, labels: &[u32]) -> Result<f64> {
    let logits = model.logits(x)?;
    Ok(accuracy_from_logits(&logits, labels))
}

pub fn accuracy_from_logits(logits: &Tensor, labels: &[u32]) -> f64 {
    if logits.rows() == 0 {
        return 0.0;
    }
    let mut correct = 0usize;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == y as usize {
            correct += 1;
        }
    }
    correct as f64 / logits.rows() as f64
}

/// Mean cross-entropy at temperature 1 against hard labels.
pub fn cross_entropy(model: &Model, x: &Tensor, labels: &[u32]) -> Result<f64> {
    let logits = model.logits(x)?;
    tensor::softmax_ce(&logits, Target::Hard(labels), 1.0)
}

/// Feature mimicking loss against a fixed teacher feature map.
pub fn feature_loss(model: &Model, x: &Tensor, teacher_features: &Tensor) -> Result<f64> {
    let feat = model.feature(x)?;
    tensor::feature_mse(&feat, teacher_features, 1.0)
}

/// Heldout-set summary of one model.
#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub cross_entropy: f64,
    pub flops: u64,
}

pub fn metrics(model: &Model, x: &Tensor, labels: &[u32]) -> Result<Metrics> {
    Ok(Metrics {
        accuracy: accuracy(model, x, labels)?,
        cross_entropy: cross_entropy(model, x, labels)?,
        flops: model.count_flops(),
    })
}
