//! Monte Carlo variance of student estimators fit to teacher outputs.
//!
//! Two student families are compared at matched sample size: squared-error
//! regression on a noisy teacher feature (closed-form least squares) and
//! softmax classification on labels sampled from a softened teacher
//! (Newton-fit logistic regression with the redundant class pinned). Their
//! predicted variances come from the inverse Fisher information with the
//! label variance treated as constant; the Monte Carlo loop measures how
//! far reality is from that.
//!
//! Feature and input draws are standard normal throughout, so the second
//! moments in the predictions are exactly 1.

use crate::error::{Error, Result};
use crate::seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

/// Predicted vs Monte Carlo estimator variance for one configuration.
#[derive(Clone, Debug, Serialize)]
pub struct VarianceCheck {
    pub n: usize,
    pub trials: usize,
    /// Trials kept; the rest hit the runaway guard or failed to converge.
    pub used_trials: usize,
    pub excluded: usize,
    pub truth_w: f64,
    pub truth_b: f64,
    pub empirical_mean_w: f64,
    pub empirical_mean_b: f64,
    pub predicted_var_w: f64,
    pub predicted_var_b: f64,
    pub empirical_var_w: f64,
    pub empirical_var_b: f64,
    /// empirical / predicted.
    pub ratio_w: f64,
    pub ratio_b: f64,
}

fn summarize(
    n: usize,
    trials: usize,
    excluded: usize,
    truth: (f64, f64),
    ws: &[f64],
    bs: &[f64],
    predicted: (f64, f64),
) -> Result<VarianceCheck> {
    let m = ws.len();
    if m < 2 {
        return Err(Error::Invariant(format!(
            "only {m} of {trials} trials usable; cannot estimate a variance"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], mu: f64| {
        v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (mw, mb) = (mean(ws), mean(bs));
    let (vw, vb) = (var(ws, mw), var(bs, mb));
    Ok(VarianceCheck {
        n,
        trials,
        used_trials: m,
        excluded,
        truth_w: truth.0,
        truth_b: truth.1,
        empirical_mean_w: mw,
        empirical_mean_b: mb,
        predicted_var_w: predicted.0,
        predicted_var_b: predicted.1,
        empirical_var_w: vw,
        empirical_var_b: vb,
        ratio_w: vw / predicted.0,
        ratio_b: vb / predicted.1,
    })
}

#[derive(Clone, Debug)]
pub struct RegressionCfg {
    pub n: usize,
    /// Teacher noise has variance `1/(2 beta)`, matching the Gaussian
    /// feature model whose negative log likelihood is
    /// `beta (f - mu)^2` plus a constant.
    pub beta: f64,
    pub trials: usize,
    pub true_w: f64,
    pub true_b: f64,
    pub seed: u64,
}

impl Default for RegressionCfg {
    fn default() -> Self {
        RegressionCfg { n: 100, beta: 0.5, trials: 2000, true_w: 1.3, true_b: -0.7, seed: 0 }
    }
}

/// Fit a line to noisy teacher features by least squares, over and over,
/// and compare the spread of the fits to `1/(2 n beta E[x^2])` for the
/// slope and `1/(2 n beta)` for the intercept.
pub fn verify_regression_variance(cfg: &RegressionCfg) -> Result<VarianceCheck> {
    if cfg.n < 2 {
        return Err(Error::InvalidArg(format!("need n >= 2, got {}", cfg.n)));
    }
    if !(cfg.beta > 0.0) {
        return Err(Error::InvalidArg(format!("beta must be positive, got {}", cfg.beta)));
    }
    if cfg.trials < 2 {
        return Err(Error::InvalidArg("need at least 2 trials".into()));
    }
    let sigma = (1.0 / (2.0 * cfg.beta)).sqrt();
    let mut ws = Vec::with_capacity(cfg.trials);
    let mut bs = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let (w_hat, b_hat) = ols_trial(cfg, sigma, t)?;
        ws.push(w_hat);
        bs.push(b_hat);
    }
    let ex2 = 1.0;
    let predicted = (1.0 / (2.0 * cfg.n as f64 * cfg.beta * ex2), 1.0 / (2.0 * cfg.n as f64 * cfg.beta));
    summarize(cfg.n, cfg.trials, 0, (cfg.true_w, cfg.true_b), &ws, &bs, predicted)
}

fn ols_trial(cfg: &RegressionCfg, sigma: f64, trial: usize) -> Result<(f64, f64)> {
    // A singular design is a probability-zero event for continuous draws;
    // resampling from a derived stream keeps the estimator well defined
    // without perturbing any other trial.
    for attempt in 0..10u64 {
        let master = seed::derive(cfg.seed, "regression_attempt", attempt);
        let mut rng = seed::rng(master, "regression_trial", trial as u64);
        let mut sx = 0.0;
        let mut sf = 0.0;
        let mut xs = Vec::with_capacity(cfg.n);
        let mut fs = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let z: f64 = StandardNormal.sample(&mut rng);
            let f = cfg.true_w * x + cfg.true_b + sigma * z;
            sx += x;
            sf += f;
            xs.push(x);
            fs.push(f);
        }
        let xbar = sx / cfg.n as f64;
        let fbar = sf / cfg.n as f64;
        let mut sxx = 0.0;
        let mut sxf = 0.0;
        for (x, f) in xs.iter().zip(&fs) {
            sxx += (x - xbar) * (x - xbar);
            sxf += (x - xbar) * (f - fbar);
        }
        if sxx < 1e-12 {
            continue;
        }
        let w_hat = sxf / sxx;
        return Ok((w_hat, fbar - w_hat * xbar));
    }
    Err(Error::Invariant("singular regression design after 10 resamples".into()))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Density of the standard normal.
fn phi(f: f64) -> f64 {
    (-0.5 * f * f).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Average label variance `E_f[q(f) (1 - q(f))]` of a two-class teacher
/// with class-0 probability `sigmoid(u f + v)` over standard normal
/// features. Composite Simpson over eight standard deviations.
pub fn average_label_variance(u: f64, v: f64) -> f64 {
    let (lo, hi, m) = (-8.0, 8.0, 4096usize);
    let h = (hi - lo) / m as f64;
    let g = |f: f64| {
        let q = sigmoid(u * f + v);
        phi(f) * q * (1.0 - q)
    };
    let mut total = g(lo) + g(hi);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        total += w * g(lo + i as f64 * h);
    }
    total * h / 3.0
}

/// Bias offset `b` such that the two-class teacher with weights zero and
/// biases `(b, -b)` has label variance exactly `epsilon` at temperature 1,
/// independent of the feature.
pub fn confidence_offset_for(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 0.25) {
        return Err(Error::InvalidArg(format!(
            "label variance must lie in (0, 0.25], got {epsilon}"
        )));
    }
    let q = (1.0 + (1.0 - 4.0 * epsilon).sqrt()) / 2.0;
    Ok(0.5 * (q / (1.0 - q)).ln())
}

#[derive(Clone, Debug)]
pub struct ClassificationCfg {
    /// Two-class teacher logits are `(w[i] f + b[i]) / temperature`.
    pub teacher_w: [f64; 2],
    pub teacher_b: [f64; 2],
    pub temperature: f64,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ClassificationCfg {
    fn default() -> Self {
        ClassificationCfg {
            teacher_w: [0.15, -0.15],
            teacher_b: [0.0, 0.0],
            temperature: 1.0,
            n: 200,
            trials: 1000,
            seed: 0,
        }
    }
}

/// Softmax shift invariance leaves one class redundant, so class 1 is
/// pinned at the softened teacher's values and only `(w_0, b_0)` is fit.
/// Hard labels are sampled from the softened teacher; the student trains a
/// plain softmax, so its target is the teacher divided by the temperature,
/// with no temperature factor in the variance.
///
/// Predicted spread: `1/(n eps E[f^2])` for the weight and `1/(n eps)` for
/// the bias, with `eps` the teacher's average label variance.
pub fn verify_classification_variance(cfg: &ClassificationCfg) -> Result<VarianceCheck> {
    if cfg.n < 2 {
        return Err(Error::InvalidArg(format!("need n >= 2, got {}", cfg.n)));
    }
    if !(cfg.temperature > 0.0) {
        return Err(Error::InvalidArg(format!(
            "temperature must be positive, got {}",
            cfg.temperature
        )));
    }
    if cfg.trials < 2 {
        return Err(Error::InvalidArg("need at least 2 trials".into()));
    }
    let t = cfg.temperature;
    let u = (cfg.teacher_w[0] - cfg.teacher_w[1]) / t;
    let v = (cfg.teacher_b[0] - cfg.teacher_b[1]) / t;
    let pinned_w = cfg.teacher_w[1] / t;
    let pinned_b = cfg.teacher_b[1] / t;

    let mut ws = Vec::with_capacity(cfg.trials);
    let mut bs = Vec::with_capacity(cfg.trials);
    let mut excluded = 0usize;
    for trial in 0..cfg.trials {
        let mut rng = seed::rng(cfg.seed, "classification_trial", trial as u64);
        let mut fs = Vec::with_capacity(cfg.n);
        let mut ys = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            let f: f64 = StandardNormal.sample(&mut rng);
            let q0 = sigmoid(u * f + v);
            fs.push(f);
            ys.push(rng.random::<f64>() < q0);
        }
        match newton_logistic(&fs, &ys, pinned_w, pinned_b) {
            Some((w0, b0)) => {
                ws.push(w0);
                bs.push(b0);
            }
            None => excluded += 1,
        }
    }

    let eps = average_label_variance(u, v);
    let ef2 = 1.0;
    let predicted = (1.0 / (cfg.n as f64 * eps * ef2), 1.0 / (cfg.n as f64 * eps));
    let truth = (cfg.teacher_w[0] / t, cfg.teacher_b[0] / t);
    summarize(cfg.n, cfg.trials, excluded, truth, &ws, &bs, predicted)
}

const RUNAWAY_BOUND: f64 = 50.0;

/// Newton iteration for the pinned two-class softmax fit, in the offset
/// parameterization `q = sigmoid(a f + c)` with
/// `(a, c) = (w_0 - pinned_w, b_0 - pinned_b)`. The log likelihood is
/// concave; `None` means the fit ran away (separable labels) or failed to
/// converge.
fn newton_logistic(fs: &[f64], ys: &[bool], pinned_w: f64, pinned_b: f64) -> Option<(f64, f64)> {
    let mut a = 0.0f64;
    let mut c = 0.0f64;
    for _ in 0..100 {
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        let mut jff = 0.0;
        let mut jf1 = 0.0;
        let mut j11 = 0.0;
        for (&f, &y) in fs.iter().zip(ys) {
            let q = sigmoid(a * f + c);
            let resid = (y as u8 as f64) - q;
            g0 += resid * f;
            g1 += resid;
            let e = q * (1.0 - q);
            jff += e * f * f;
            jf1 += e * f;
            j11 += e;
        }
        if g0.abs() < 1e-8 && g1.abs() < 1e-8 {
            return Some((a + pinned_w, c + pinned_b));
        }
        let det = jff * j11 - jf1 * jf1;
        if !(det > 1e-300) {
            return None;
        }
        a += (j11 * g0 - jf1 * g1) / det;
        c += (jff * g1 - jf1 * g0) / det;
        if a.abs() > RUNAWAY_BOUND || c.abs() > RUNAWAY_BOUND || !a.is_finite() || !c.is_finite() {
            return None;
        }
    }
    None
}

/// Re-run the classification check over sample sizes, one derived seed per
/// point.
pub fn classification_variance_sweep_n(
    base: &ClassificationCfg,
    ns: &[usize],
) -> Result<Vec<VarianceCheck>> {
    ns.iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut cfg = base.clone();
            cfg.n = n;
            cfg.seed = seed::derive(base.seed, "sweep_n", i as u64);
            verify_classification_variance(&cfg)
        })
        .collect()
}

/// Re-run the classification check over teacher temperatures, one derived
/// seed per point.
pub fn classification_variance_sweep_temperature(
    base: &ClassificationCfg,
    temperatures: &[f64],
) -> Result<Vec<VarianceCheck>> {
    temperatures
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut cfg = base.clone();
            cfg.temperature = t;
            cfg.seed = seed::derive(base.seed, "sweep_temperature", i as u64);
            verify_classification_variance(&cfg)
        })
        .collect()
}

/// Head-to-head stability of the two student families at matched `n`.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityComparison {
    pub epsilon: f64,
    /// Regression wins exactly when `epsilon` is below
    /// `2 beta E[x^2] / E[f^2]`.
    pub threshold: f64,
    pub predict_regression_more_stable: bool,
    pub empirical_regression_more_stable: bool,
    pub agrees: bool,
    pub regression: VarianceCheck,
    pub classification: VarianceCheck,
}

/// Compare feature regression against softmax fitting on a teacher whose
/// label variance is exactly `epsilon`. Both the prediction and the Monte
/// Carlo outcome are reported; `agrees` says whether they match, in either
/// direction.
pub fn compare_stability(
    n: usize,
    beta: f64,
    epsilon: f64,
    trials: usize,
    seed_val: u64,
) -> Result<StabilityComparison> {
    let offset = confidence_offset_for(epsilon)?;
    let regression = verify_regression_variance(&RegressionCfg {
        n,
        beta,
        trials,
        seed: seed::derive(seed_val, "stability_regression", 0),
        ..RegressionCfg::default()
    })?;
    let classification = verify_classification_variance(&ClassificationCfg {
        teacher_w: [0.0, 0.0],
        teacher_b: [offset, -offset],
        temperature: 1.0,
        n,
        trials,
        seed: seed::derive(seed_val, "stability_classification", 0),
    })?;
    let ex2 = 1.0;
    let ef2 = 1.0;
    let threshold = 2.0 * beta * ex2 / ef2;
    let predict = epsilon < threshold;
    let empirical = regression.empirical_var_w < classification.empirical_var_w;
    Ok(StabilityComparison {
        epsilon,
        threshold,
        predict_regression_more_stable: predict,
        empirical_regression_more_stable: empirical,
        agrees: predict == empirical,
        regression,
        classification,
    })
}
