//! Synthetic datasets, CSV I/O, and tiny-set sampling.
//!
//! Features are standardized to per-feature mean 0 / std 1 on the train
//! split; the standardization statistics travel with the dataset so files
//! round-trip exactly.

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::BufReader;
use std::path::Path;

/// Per-feature standardization statistics, computed on the train split.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Generation parameters kept for provenance and manifest round-trips.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub classes: usize,
    pub dim: usize,
    pub n: usize,
    pub seed: u64,
    pub class_sep: f64,
}

/// Labeled points with train/heldout split tags.
///
/// `x` holds standardized features; `train` and `heldout` index rows of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub labels: Vec<u32>,
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
    pub stats: Standardization,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Feature rows of the train split, in split order.
    pub fn train_x(&self) -> Tensor {
        self.x.select_rows(&self.train)
    }

    pub fn train_labels(&self) -> Vec<u32> {
        self.train.iter().map(|&r| self.labels[r]).collect()
    }

    pub fn heldout_x(&self) -> Tensor {
        self.x.select_rows(&self.heldout)
    }

    pub fn heldout_labels(&self) -> Vec<u32> {
        self.heldout.iter().map(|&r| self.labels[r]).collect()
    }
}

/// K Gaussian clusters with unit covariance, means drawn on a seeded random
/// sphere of radius `class_sep`. Rows are grouped by class; the first
/// `n_train_per_class` rows of each class form the train split.
pub fn generate_gaussian_mixture(
    classes: usize,
    dim: usize,
    n_train_per_class: usize,
    n_heldout_per_class: usize,
    class_sep: f64,
    seed_val: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArg(format!("need at least 2 classes, got {classes}")));
    }
    if dim < 2 {
        return Err(Error::InvalidArg(format!("need dim >= 2, got {dim}")));
    }
    if n_train_per_class == 0 {
        return Err(Error::InvalidArg("need at least 1 train sample per class".into()));
    }

    let mut mean_rng = seed::rng(seed_val, "mixture_means", 0);
    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut m: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut mean_rng)).collect();
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut m {
            *v *= class_sep / norm;
        }
        means.push(m);
    }

    let per_class = n_train_per_class + n_heldout_per_class;
    let n = classes * per_class;
    let mut raw = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut train = Vec::with_capacity(classes * n_train_per_class);
    let mut heldout = Vec::with_capacity(classes * n_heldout_per_class);
    for c in 0..classes {
        let mut rng = seed::rng(seed_val, "mixture_samples", c as u64);
        for i in 0..per_class {
            let row = c * per_class + i;
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                raw.push(means[c][d] + z);
            }
            labels.push(c as u32);
            if i < n_train_per_class {
                train.push(row);
            } else {
                heldout.push(row);
            }
        }
    }

    let x = Tensor::from_vec(n, dim, raw)?;
    let (x, stats) = standardize(&x, &train);
    Ok(Dataset {
        x,
        labels,
        train,
        heldout,
        stats,
        meta: DatasetMeta { classes, dim, n, seed: seed_val, class_sep },
    })
}

/// Standardize every row using mean/std computed on `train_rows` only.
/// Population std; features with (near-)zero spread are left unscaled.
fn standardize(x: &Tensor, train_rows: &[usize]) -> (Tensor, Standardization) {
    let d = x.cols();
    let nt = train_rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in train_rows {
        for (j, v) in x.row(r).iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in &mut mean {
        *m /= nt;
    }
    let mut var = vec![0.0; d];
    for &r in train_rows {
        for (j, v) in x.row(r).iter().enumerate() {
            let dv = v - mean[j];
            var[j] += dv * dv;
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / nt).sqrt();
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        })
        .collect();

    let mut out = x.clone();
    for r in 0..x.rows() {
        for j in 0..d {
            let v = (x.get(r, j) - mean[j]) / std[j];
            out.set(r, j, v);
        }
    }
    (out, Standardization { mean, std })
}

/// Uniform sample of `m` train rows, without replacement. The result keeps
/// the parent's standardization and puts every sampled row in its train
/// split (tiny sets are for training; evaluate on the parent's heldout).
pub fn sample_tiny(ds: &Dataset, m: usize, seed_val: u64) -> Result<Dataset> {
    let picked = sample_train_rows(ds, m, seed_val)?;
    Ok(subset(ds, &picked))
}

/// Two disjoint tiny sets of `m` rows each, drawn from the same stream.
pub fn sample_tiny_disjoint(ds: &Dataset, m: usize, seed_val: u64) -> Result<(Dataset, Dataset)> {
    let picked = sample_train_rows(ds, 2 * m, seed_val)?;
    Ok((subset(ds, &picked[..m]), subset(ds, &picked[m..])))
}

fn sample_train_rows(ds: &Dataset, m: usize, seed_val: u64) -> Result<Vec<usize>> {
    if m > ds.train.len() {
        return Err(Error::InvalidArg(format!(
            "cannot sample {m} of {} train rows",
            ds.train.len()
        )));
    }
    let mut rng = seed::rng(seed_val, "tiny_sample", 0);
    let idx = rand::seq::index::sample(&mut rng, ds.train.len(), m);
    Ok(idx.iter().map(|i| ds.train[i]).collect())
}

fn subset(ds: &Dataset, rows: &[usize]) -> Dataset {
    Dataset {
        x: ds.x.select_rows(rows),
        labels: rows.iter().map(|&r| ds.labels[r]).collect(),
        train: (0..rows.len()).collect(),
        heldout: Vec::new(),
        stats: ds.stats.clone(),
        meta: DatasetMeta { n: rows.len(), ..ds.meta.clone() },
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    meta: DatasetMeta,
    stats: Standardization,
    train: Vec<usize>,
    heldout: Vec<usize>,
}

fn manifest_path(csv_path: &Path) -> std::path::PathBuf {
    let mut os = csv_path.as_os_str().to_os_string();
    os.push(".manifest.json");
    os.into()
}

/// Write `f0,...,f{d-1},label` rows plus a JSON manifest sidecar carrying the
/// split and standardization statistics. Floats are written in shortest
/// round-trip form, so read_csv restores them bit for bit.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for r in 0..ds.len() {
        let mut fields: Vec<String> = ds.x.row(r).iter().map(|v| format!("{v}")).collect();
        fields.push(ds.labels[r].to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;

    let manifest = Manifest {
        version: 1,
        meta: ds.meta.clone(),
        stats: ds.stats.clone(),
        train: ds.train.clone(),
        heldout: ds.heldout.clone(),
    };
    let f = std::fs::File::create(manifest_path(path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &manifest)?;
    Ok(())
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Read a CSV written by [`write_csv`], restoring splits and statistics from
/// the manifest. A bare CSV without a manifest is treated as raw data: it is
/// standardized from scratch and every row lands in the train split.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;

    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[header.len() - 1] != "label" {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "last column must be 'label', got '{}'",
                header.iter().last().unwrap_or("")
            ),
        });
    }
    let d = header.len() - 1;
    for (j, c) in header.iter().take(d).enumerate() {
        let want = format!("f{j}");
        if c != want {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected column '{want}', got '{c}'"),
            });
        }
    }

    let mut raw = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, msg: e.to_string() }
        })?;
        if rec.len() != d + 1 {
            return Err(Error::Parse {
                line: record_line(&rec),
                msg: format!("expected {} fields, got {}", d + 1, rec.len()),
            });
        }
        for f in rec.iter().take(d) {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: record_line(&rec),
                msg: format!("bad float '{f}'"),
            })?;
            raw.push(v);
        }
        let label: u32 = rec[d].parse().map_err(|_| Error::Parse {
            line: record_line(&rec),
            msg: format!("bad label '{}'", &rec[d]),
        })?;
        labels.push(label);
    }
    let n = labels.len();
    let x = Tensor::from_vec(n, d, raw)?;
    if !x.is_finite() {
        return Err(Error::Parse { line: 1, msg: "non-finite value in file".into() });
    }

    let mpath = manifest_path(path);
    if mpath.exists() {
        let manifest: Manifest =
            serde_json::from_reader(BufReader::new(std::fs::File::open(&mpath)?))?;
        if manifest.version != 1 {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unsupported manifest version {}", manifest.version),
            });
        }
        if manifest.meta.n != n || manifest.meta.dim != d {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "manifest describes {}x{}, file has {}x{}",
                    manifest.meta.n, manifest.meta.dim, n, d
                ),
            });
        }
        return Ok(Dataset {
            x,
            labels,
            train: manifest.train,
            heldout: manifest.heldout,
            stats: manifest.stats,
            meta: manifest.meta,
        });
    }

    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let train: Vec<usize> = (0..n).collect();
    let (x, stats) = standardize(&x, &train);
    Ok(Dataset {
        x,
        labels,
        train,
        heldout: Vec::new(),
        stats,
        meta: DatasetMeta { classes, dim: d, n, seed: 0, class_sep: f64::NAN },
    })
}
