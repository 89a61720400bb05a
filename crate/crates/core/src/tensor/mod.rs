//! Dense 2-D tensors of f64 with the handful of kernels the networks need.
//!
//! The same kernel functions are used by the plain model forward pass and by
//! the autodiff tape, so both paths produce bitwise-identical values. All
//! loops run in a fixed order; nothing here is parallel.

pub mod gradcheck;
mod graph;
mod optim;

pub use graph::{NodeId, Tape};
pub use optim::{sgd_step, sgd_update, LrSchedule};

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense row-major matrix of f64. Vectors are 1×n rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{}x{} tensor needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Seeded Gaussian init with standard deviation `std`.
    pub fn randn<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// New tensor from the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Tensor { rows: idx.len(), cols: self.cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!(
        "{op}: {}x{} vs {}x{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(shape_err("matmul", a, b));
    }
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for j in 0..b.cols {
                orow[j] += aik * brow[j];
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.cols {
        return Err(shape_err("matmul_nt", a, b));
    }
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += arow[k] * brow[k];
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows != b.rows {
        return Err(shape_err("matmul_tn", a, b));
    }
    let mut out = Tensor::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for i in 0..a.cols {
            let aki = arow[i];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for j in 0..b.cols {
                orow[j] += aki * brow[j];
            }
        }
    }
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", a, b));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor { rows: a.rows, cols: a.cols, data })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("sub", a, b));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(Tensor { rows: a.rows, cols: a.cols, data })
}

/// Broadcast-add a 1×n row to every row of `m`.
pub fn add_row(m: &Tensor, row: &Tensor) -> Result<Tensor> {
    if row.rows != 1 || row.cols != m.cols {
        return Err(shape_err("add_row", m, row));
    }
    let mut out = m.clone();
    for r in 0..m.rows {
        let orow = &mut out.data[r * m.cols..(r + 1) * m.cols];
        for j in 0..m.cols {
            orow[j] += row.data[j];
        }
    }
    Ok(out)
}

/// Elementwise max(0, x). The branch maps -0.0 to 0.0, so outputs carry no
/// negative zeros.
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor { rows: x.rows, cols: x.cols, data }
}

/// Upstream gradient through relu: zero where `x <= 0` (subgradient at the
/// kink is 0).
pub fn relu_backward(upstream: &Tensor, x: &Tensor) -> Tensor {
    let data = upstream
        .data
        .iter()
        .zip(&x.data)
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor { rows: x.rows, cols: x.cols, data }
}

/// Column sums as a 1×n row.
pub fn col_sum(m: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, m.cols);
    for r in 0..m.rows {
        let row = m.row(r);
        for j in 0..m.cols {
            out.data[j] += row[j];
        }
    }
    out
}

pub fn scale(x: &Tensor, s: f64) -> Tensor {
    let data = x.data.iter().map(|v| v * s).collect();
    Tensor { rows: x.rows, cols: x.cols, data }
}

pub fn sum(x: &Tensor) -> f64 {
    x.data.iter().sum()
}

/// `beta ×` batch mean of the per-row squared Frobenius distance.
pub fn feature_mse(s: &Tensor, t: &Tensor, beta: f64) -> Result<f64> {
    if s.shape() != t.shape() {
        return Err(shape_err("feature_mse", s, t));
    }
    if beta <= 0.0 {
        return Err(Error::InvalidArg(format!("feature_mse: beta must be > 0, got {beta}")));
    }
    let mut total = 0.0;
    for (a, b) in s.data.iter().zip(&t.data) {
        let d = a - b;
        total += d * d;
    }
    Ok(beta * total / s.rows as f64)
}

/// Row-wise softmax of `logits / temperature`, computed with max subtraction.
pub fn softmax_rows(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if temperature <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "softmax: temperature must be > 0, got {temperature}"
        )));
    }
    if !logits.is_finite() {
        return Err(Error::InvalidArg("softmax: non-finite logits".into()));
    }
    let mut out = Tensor::zeros(logits.rows, logits.cols);
    for r in 0..logits.rows {
        let row = logits.row(r);
        let mut max = f64::NEG_INFINITY;
        for &z in row {
            max = max.max(z / temperature);
        }
        let orow = &mut out.data[r * logits.cols..(r + 1) * logits.cols];
        let mut denom = 0.0;
        for (j, &z) in row.iter().enumerate() {
            let e = (z / temperature - max).exp();
            orow[j] = e;
            denom += e;
        }
        for v in orow.iter_mut() {
            *v /= denom;
        }
    }
    Ok(out)
}

/// Cross-entropy targets: hard integer labels or rows of probabilities.
#[derive(Clone, Debug)]
pub enum Target<'a> {
    Hard(&'a [u32]),
    Soft(&'a Tensor),
}

fn validate_ce(logits: &Tensor, target: &Target, temperature: f64) -> Result<()> {
    if temperature <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "softmax_ce: temperature must be > 0, got {temperature}"
        )));
    }
    if !logits.is_finite() {
        return Err(Error::InvalidArg("softmax_ce: non-finite logits".into()));
    }
    match target {
        Target::Hard(labels) => {
            if labels.len() != logits.rows {
                return Err(Error::Shape(format!(
                    "softmax_ce: {} labels for {} rows",
                    labels.len(),
                    logits.rows
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= logits.cols) {
                return Err(Error::InvalidArg(format!(
                    "softmax_ce: label {bad} out of range for {} classes",
                    logits.cols
                )));
            }
        }
        Target::Soft(t) => {
            if t.shape() != logits.shape() {
                return Err(shape_err("softmax_ce", logits, t));
            }
            for r in 0..t.rows() {
                let s: f64 = t.row(r).iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArg(format!(
                        "softmax_ce: target row {r} sums to {s}, expected 1"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Mean cross-entropy of `softmax(logits / T)` against the targets.
///
/// Computed via log-sum-exp: per-row loss is `lse − z_y/T` for a hard label
/// and `Σ_c t_c (lse − z_c/T)` for a soft row.
pub fn softmax_ce(logits: &Tensor, target: Target, temperature: f64) -> Result<f64> {
    validate_ce(logits, &target, temperature)?;
    let mut total = 0.0;
    for r in 0..logits.rows {
        let row = logits.row(r);
        let mut max = f64::NEG_INFINITY;
        for &z in row {
            max = max.max(z / temperature);
        }
        let mut denom = 0.0;
        for &z in row {
            denom += (z / temperature - max).exp();
        }
        let lse = max + denom.ln();
        match &target {
            Target::Hard(labels) => {
                total += lse - row[labels[r] as usize] / temperature;
            }
            Target::Soft(t) => {
                for (j, &tc) in t.row(r).iter().enumerate() {
                    total += tc * (lse - row[j] / temperature);
                }
            }
        }
    }
    Ok(total / logits.rows as f64)
}

/// Gradient of `softmax_ce` w.r.t. the logits: `(softmax(z/T) − target) / (bT)`.
pub fn softmax_ce_backward(logits: &Tensor, target: Target, temperature: f64) -> Result<Tensor> {
    validate_ce(logits, &target, temperature)?;
    let mut g = softmax_rows(logits, temperature)?;
    match &target {
        Target::Hard(labels) => {
            for (r, &l) in labels.iter().enumerate() {
                let v = g.get(r, l as usize);
                g.set(r, l as usize, v - 1.0);
            }
        }
        Target::Soft(t) => {
            for (gv, tv) in g.data.iter_mut().zip(t.data()) {
                *gv -= tv;
            }
        }
    }
    let s = 1.0 / (logits.rows as f64 * temperature);
    Ok(scale(&g, s))
}
