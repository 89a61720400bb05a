//! Loss-landscape probes along straight lines in parameter space.
//!
//! Two models with identical layouts are connected by
//! `theta(lambda) = (1 - lambda) * a + lambda * b` and a fixed evaluation
//! set is scored along the way. The endpoints are special-cased so
//! `lambda = 0` and `lambda = 1` reproduce the inputs bit for bit.

use crate::error::{Error, Result};
use crate::eval;
use crate::network::{Model, ParamVector};
use crate::tensor::Tensor;
use serde::Serialize;
use std::path::Path;

/// What to score along the path.
pub enum LossEval<'a> {
    CrossEntropy { x: &'a Tensor, labels: &'a [u32] },
    FeatureMse { x: &'a Tensor, teacher_features: &'a Tensor },
}

impl LossEval<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            LossEval::CrossEntropy { .. } => "cross_entropy",
            LossEval::FeatureMse { .. } => "feature_mse",
        }
    }

    fn score(&self, model: &Model) -> Result<f64> {
        match self {
            LossEval::CrossEntropy { x, labels } => eval::cross_entropy(model, x, labels),
            LossEval::FeatureMse { x, teacher_features } => {
                eval::feature_loss(model, x, teacher_features)
            }
        }
    }
}

/// Linear interpolation of two parameter vectors with matching layouts.
/// The endpoints are returned as clones, not recomputed.
pub fn interpolate(a: &ParamVector, b: &ParamVector, lambda: f64) -> Result<ParamVector> {
    if !a.same_layout(b) {
        return Err(Error::Shape("interpolation endpoints have different layouts".into()));
    }
    if !lambda.is_finite() {
        return Err(Error::InvalidArg(format!("non-finite lambda {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(a.clone());
    }
    if lambda == 1.0 {
        return Ok(b.clone());
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&va, &vb)| (1.0 - lambda) * va + lambda * vb)
        .collect();
    Ok(ParamVector { values, layout: a.layout.clone() })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub loss: f64,
}

/// Losses along one interpolation path, in grid order.
#[derive(Clone, Debug, Serialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn endpoint_losses(&self) -> (f64, f64) {
        (self.points.first().map(|p| p.loss).unwrap_or(f64::NAN),
         self.points.last().map(|p| p.loss).unwrap_or(f64::NAN))
    }

    fn interior_vs_chord(&self) -> impl Iterator<Item = f64> + '_ {
        let (l0, l1) = self.endpoint_losses();
        self.points[1..self.points.len().saturating_sub(1)].iter().map(move |p| {
            let chord = (1.0 - p.lambda) * l0 + p.lambda * l1;
            p.loss - chord
        })
    }

    /// Largest amount the curve rises above the endpoint chord, interior
    /// points only. Negative when the whole interior sits below the chord.
    pub fn convexity_gap(&self) -> f64 {
        if self.points.len() < 3 {
            return 0.0;
        }
        self.interior_vs_chord().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest amount the curve dips below the endpoint chord, interior
    /// points only, sign-preserved.
    pub fn loss_leakage_raw(&self) -> f64 {
        if self.points.len() < 3 {
            return 0.0;
        }
        self.interior_vs_chord().fold(f64::NEG_INFINITY, |m, d| m.max(-d))
    }

    /// [`Curve::loss_leakage_raw`] clamped at zero.
    pub fn loss_leakage(&self) -> f64 {
        self.loss_leakage_raw().max(0.0)
    }
}

/// Evenly spaced grid over `[0, 1]`, endpoints included.
pub fn lambda_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidArg(format!("need at least 2 grid points, got {points}")));
    }
    let d = (points - 1) as f64;
    Ok((0..points).map(|i| i as f64 / d).collect())
}

/// Score a fixed evaluation set along the straight line between two
/// parameter vectors. `template` supplies the architecture (including
/// dropped blocks and shrunken widths); both endpoints must match its
/// layout.
pub fn loss_curve(
    template: &Model,
    a: &ParamVector,
    b: &ParamVector,
    loss: &LossEval,
    points: usize,
) -> Result<Curve> {
    let grid = lambda_grid(points)?;
    let mut model = template.clone();
    let mut out = Vec::with_capacity(points);
    for lambda in grid {
        model.load_flat(&interpolate(a, b, lambda)?)?;
        out.push(CurvePoint { lambda, loss: loss.score(&model)? });
    }
    Ok(Curve { points: out })
}

/// Summary of one probe, written next to the curve CSV.
#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    pub loss_kind: String,
    pub points: usize,
    pub loss_at_0: f64,
    pub loss_at_1: f64,
    pub convexity_gap: f64,
    pub loss_leakage_raw: f64,
    pub loss_leakage: f64,
}

impl Diagnostics {
    pub fn of(curve: &Curve, loss_kind: &str) -> Diagnostics {
        let (l0, l1) = curve.endpoint_losses();
        Diagnostics {
            loss_kind: loss_kind.to_string(),
            points: curve.points.len(),
            loss_at_0: l0,
            loss_at_1: l1,
            convexity_gap: curve.convexity_gap(),
            loss_leakage_raw: curve.loss_leakage_raw(),
            loss_leakage: curve.loss_leakage(),
        }
    }
}

pub fn write_curve_csv(curve: &Curve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "loss"])?;
    for p in &curve.points {
        w.write_record([format!("{}", p.lambda), format!("{}", p.loss)])?;
    }
    w.flush()?;
    Ok(())
}
