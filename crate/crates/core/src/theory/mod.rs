//! Numeric verification of the information-theoretic claims behind feature
//! mimicking.
//!
//! The discrete checks work on exhaustively summed joint tables, so every
//! expectation is exact up to rounding and the checks need no sampling
//! tolerance. The estimator-variance suites live in [`variance`].

pub mod variance;

pub use variance::{
    average_label_variance, classification_variance_sweep_n,
    classification_variance_sweep_temperature, compare_stability, confidence_offset_for,
    verify_classification_variance, verify_regression_variance, ClassificationCfg,
    RegressionCfg, StabilityComparison, VarianceCheck,
};

use crate::error::{Error, Result};
use crate::seed;
use rand::Rng;
use serde::Serialize;

/// Dense joint distribution over a discrete label `y` and a discrete
/// feature `f`, stored row-major as `p[y * nf + f]`. Every cell is strictly
/// positive so all KL terms are finite.
#[derive(Clone, Debug)]
pub struct DiscreteJoint {
    pub ny: usize,
    pub nf: usize,
    pub p: Vec<f64>,
}

impl DiscreteJoint {
    /// Random full-support joint: exponential draws, normalized, then mixed
    /// with a little uniform mass to bound cells away from zero.
    pub fn random(ny: usize, nf: usize, rng: &mut impl rand::Rng) -> DiscreteJoint {
        let size = ny * nf;
        let mut p: Vec<f64> = (0..size).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = p.iter().sum();
        let delta = 1e-4;
        let uniform = 1.0 / size as f64;
        for v in &mut p {
            *v = (1.0 - delta) * (*v / total) + delta * uniform;
        }
        let total: f64 = p.iter().sum();
        for v in &mut p {
            *v /= total;
        }
        DiscreteJoint { ny, nf, p }
    }

    pub fn get(&self, y: usize, f: usize) -> f64 {
        self.p[y * self.nf + f]
    }

    /// `p(y)`, summing the feature out.
    pub fn marginal_y(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ny];
        for y in 0..self.ny {
            for f in 0..self.nf {
                out[y] += self.get(y, f);
            }
        }
        out
    }

    /// `p(f)`, summing the label out.
    pub fn marginal_f(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nf];
        for y in 0..self.ny {
            for f in 0..self.nf {
                out[f] += self.get(y, f);
            }
        }
        out
    }

    /// `p(y | f)` for one feature value.
    pub fn conditional_y(&self, f: usize) -> Vec<f64> {
        let pf: f64 = (0..self.ny).map(|y| self.get(y, f)).sum();
        (0..self.ny).map(|y| self.get(y, f) / pf).collect()
    }

    /// Independent product `r(y, f) = py(y) * pf(f)`.
    pub fn product(py: &[f64], pf: &[f64]) -> DiscreteJoint {
        let mut p = Vec::with_capacity(py.len() * pf.len());
        for &a in py {
            for &b in pf {
                p.push(a * b);
            }
        }
        DiscreteJoint { ny: py.len(), nf: pf.len(), p }
    }
}

/// `KL(p || q)` for two distributions on the same finite set. Zero-mass
/// cells of `p` contribute nothing.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("KL over {} vs {} cells", p.len(), q.len())));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::InvalidArg("KL undefined: q has a zero where p does not".into()));
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total)
}

pub fn kl_joint(p: &DiscreteJoint, q: &DiscreteJoint) -> Result<f64> {
    if p.ny != q.ny || p.nf != q.nf {
        return Err(Error::Shape(format!(
            "joint shapes {}x{} vs {}x{}",
            p.ny, p.nf, q.ny, q.nf
        )));
    }
    kl_discrete(&p.p, &q.p)
}

/// Result of stress-testing an inequality over random instances.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub trials: usize,
    pub violations: usize,
    pub min_margin: f64,
}

/// Output divergence never exceeds joint divergence:
/// `KL(p(y) || q(y)) <= KL(p(y,f) || q(y,f))` on random full-support
/// joints. Reports the smallest margin seen.
pub fn verify_marginal_kl_bound(
    ny: usize,
    nf: usize,
    trials: usize,
    seed_val: u64,
) -> Result<BoundCheck> {
    if ny < 2 || nf < 2 {
        return Err(Error::InvalidArg("need at least 2 labels and 2 feature values".into()));
    }
    let mut rng = seed::rng(seed_val, "kl_bound", 0);
    let mut min_margin = f64::INFINITY;
    let mut violations = 0usize;
    for _ in 0..trials {
        let p = DiscreteJoint::random(ny, nf, &mut rng);
        let q = DiscreteJoint::random(ny, nf, &mut rng);
        let marginal = kl_discrete(&p.marginal_y(), &q.marginal_y())?;
        let joint = kl_joint(&p, &q)?;
        let margin = joint - marginal;
        if margin < -1e-12 {
            violations += 1;
        }
        min_margin = min_margin.min(margin);
    }
    Ok(BoundCheck { trials, violations, min_margin })
}

/// Result of checking an exact identity over random instances.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub trials: usize,
    pub max_abs_err: f64,
}

/// The joint divergence splits into a feature-fit term, an output term, and
/// a constant that does not depend on `q`:
///
/// `KL(p(y,f) || q(y,f)) = E_{p(f)}[-ln q(f)]
///                        + E_{p(f)}[KL(p(y|f) || q(y|f))]
///                        + E_{p(f)}[ln p(f)]`
///
/// Verified by exhaustive summation on random joints.
pub fn verify_joint_kl_decomposition(
    ny: usize,
    nf: usize,
    trials: usize,
    seed_val: u64,
) -> Result<IdentityCheck> {
    if ny < 2 || nf < 2 {
        return Err(Error::InvalidArg("need at least 2 labels and 2 feature values".into()));
    }
    let mut rng = seed::rng(seed_val, "kl_decomposition", 0);
    let mut max_abs_err = 0.0f64;
    for _ in 0..trials {
        let p = DiscreteJoint::random(ny, nf, &mut rng);
        let q = DiscreteJoint::random(ny, nf, &mut rng);
        max_abs_err = max_abs_err.max(decomposition_error(&p, &q)?);
    }
    Ok(IdentityCheck { trials, max_abs_err })
}

/// |lhs - rhs| of the decomposition for one pair of joints.
pub fn decomposition_error(p: &DiscreteJoint, q: &DiscreteJoint) -> Result<f64> {
    let lhs = kl_joint(p, q)?;
    let pf = p.marginal_f();
    let qf = q.marginal_f();
    let mut feature_nll = 0.0;
    let mut output_term = 0.0;
    let mut constant = 0.0;
    for f in 0..p.nf {
        feature_nll += pf[f] * -qf[f].ln();
        output_term += pf[f] * kl_discrete(&p.conditional_y(f), &q.conditional_y(f))?;
        constant += pf[f] * pf[f].ln();
    }
    Ok((lhs - (feature_nll + output_term + constant)).abs())
}

/// Result of checking that the Gaussian feature-fit term is a scaled
/// squared error plus a constant.
#[derive(Clone, Debug, Serialize)]
pub struct GaussianNllCheck {
    pub trials: usize,
    pub expected_constant: f64,
    pub max_abs_dev: f64,
}

/// For a Gaussian feature model with precision-style spread `beta`
/// (variance `1/(2 beta)`), the negative log density is
/// `beta (f - mu)^2 + 0.5 ln(pi / beta)`: fitting `mu` by maximum
/// likelihood is exactly squared-error regression on the feature. Checked
/// by evaluating the density over random `(f, mu)` pairs.
pub fn verify_gaussian_nll_is_scaled_mse(
    beta: f64,
    trials: usize,
    seed_val: u64,
) -> Result<GaussianNllCheck> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArg(format!("beta must be positive, got {beta}")));
    }
    let mut rng = seed::rng(seed_val, "gaussian_nll", 0);
    let expected = 0.5 * (std::f64::consts::PI / beta).ln();
    let mut max_abs_dev = 0.0f64;
    for _ in 0..trials {
        let f = 4.0 * (rng.random::<f64>() - 0.5);
        let mu = 4.0 * (rng.random::<f64>() - 0.5);
        let sigma2 = 1.0 / (2.0 * beta);
        let density =
            (-(f - mu) * (f - mu) / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).sqrt();
        let nll = -density.ln();
        let dev = (nll - beta * (f - mu) * (f - mu) - expected).abs();
        max_abs_dev = max_abs_dev.max(dev);
    }
    Ok(GaussianNllCheck { trials, expected_constant: expected, max_abs_dev })
}
