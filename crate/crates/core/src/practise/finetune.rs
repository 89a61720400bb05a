//! Finetuning a pruned model against its teacher on a tiny training set.
//!
//! Three methods: plain label training, distillation from the teacher's
//! softened outputs, and feature mimicking. Feature mimicking copies the
//! teacher's head into the student, freezes it, and trains only the
//! backbone to reproduce the teacher's features; the labels are never used.

use crate::error::{Error, Result};
use crate::network::{Model, TrainScope};
use crate::seed;
use crate::tensor::{LrSchedule, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FinetuneMethod {
    /// Cross-entropy on the tiny set's labels, all parameters.
    Bp,
    /// Soft cross-entropy against teacher outputs at this temperature,
    /// all parameters.
    Kd { temperature: f64 },
    /// Squared feature error against the teacher, backbone only, teacher
    /// head copied and frozen.
    FeatureMimic,
}

#[derive(Clone, Debug)]
pub struct FinetuneCfg {
    pub method: FinetuneMethod,
    pub iters: usize,
    pub base_lr: f64,
    pub batch: usize,
    /// Feature mimicking only: train on the squared feature error divided
    /// by the mean squared teacher feature, decoupling the usable learning
    /// rate from the teacher's feature scale. Label and distillation
    /// losses are already scale-free and ignore this.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for FinetuneCfg {
    fn default() -> Self {
        FinetuneCfg {
            method: FinetuneMethod::FeatureMimic,
            iters: 2000,
            base_lr: 0.02,
            batch: 64,
            normalize: false,
            seed: 0,
        }
    }
}

/// Train `student` on the tiny set. Returns the trained model and the
/// per-iteration loss trace.
pub fn finetune(
    teacher: &Model,
    mut student: Model,
    tiny_x: &Tensor,
    tiny_labels: &[u32],
    cfg: &FinetuneCfg,
) -> Result<(Model, Vec<f64>)> {
    if tiny_x.rows() == 0 {
        return Err(Error::InvalidArg("empty tiny set".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArg("batch must be positive".into()));
    }
    if tiny_labels.len() != tiny_x.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            tiny_labels.len(),
            tiny_x.rows()
        )));
    }
    if let FinetuneMethod::Kd { temperature } = cfg.method {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArg(format!(
                "distillation temperature must be positive, got {temperature}"
            )));
        }
    }

    let scope = match cfg.method {
        FinetuneMethod::FeatureMimic => {
            if teacher.head_w.shape() != student.head_w.shape() {
                return Err(Error::Shape(format!(
                    "teacher head {:?} does not fit student head {:?}",
                    teacher.head_w.shape(),
                    student.head_w.shape()
                )));
            }
            student.head_w = teacher.head_w.clone();
            student.head_b = teacher.head_b.clone();
            TrainScope::BACKBONE
        }
        _ => TrainScope::ALL,
    };

    // Teacher targets over the whole tiny set, computed once.
    let target_feat = match cfg.method {
        FinetuneMethod::FeatureMimic => Some(teacher.feature(tiny_x)?),
        _ => None,
    };
    let beta = target_feat
        .as_ref()
        .map_or(1.0, |f| super::training_beta(f, cfg.normalize));
    let target_logits = match cfg.method {
        FinetuneMethod::Kd { .. } => Some(teacher.logits(tiny_x)?),
        _ => None,
    };

    let b = cfg.batch.min(tiny_x.rows());
    let sched = LrSchedule::new(cfg.base_lr, cfg.iters);
    let mut trace = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let mut rng = seed::rng(cfg.seed, "finetune_batch", it as u64);
        let rows: Vec<usize> =
            rand::seq::index::sample(&mut rng, tiny_x.rows(), b).iter().collect();
        let xb = tiny_x.select_rows(&rows);

        let mut tape = Tape::new();
        let xid = tape.constant(xb);
        let tp = student.register(&mut tape, scope);
        let (fid, lid) = student.forward_on(&mut tape, &tp, xid)?;
        let loss = match cfg.method {
            FinetuneMethod::Bp => {
                let yb: Vec<u32> = rows.iter().map(|&r| tiny_labels[r]).collect();
                tape.softmax_ce_hard(lid, &yb, 1.0)?
            }
            FinetuneMethod::Kd { temperature } => {
                let zb = target_logits.as_ref().unwrap().select_rows(&rows);
                let soft = crate::tensor::softmax_rows(&zb, temperature)?;
                tape.softmax_ce_soft(lid, &soft, temperature)?
            }
            FinetuneMethod::FeatureMimic => {
                let tb = target_feat.as_ref().unwrap().select_rows(&rows);
                let tid = tape.constant(tb);
                tape.feature_mse(fid, tid, beta)?
            }
        };
        trace.push(tape.scalar(loss)?);
        tape.backward(loss)?;
        student.apply_sgd(&tape, &tp, scope, sched.lr(it))?;
    }
    Ok((student, trace))
}
