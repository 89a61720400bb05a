//! Few-shot block selection: latency measurement, recoverability scoring,
//! and the drop-then-finetune pipeline.
//!
//! A block's score is `recoverability / latency_reduction`. Low
//! recoverability means nearby adaptors can absorb the block's function
//! from a tiny training set; high latency reduction means dropping it buys
//! real speed. Blocks with the smallest scores are dropped first.

pub mod finetune;

pub use finetune::{finetune, FinetuneCfg, FinetuneMethod};

use crate::compress::{drop_block, insert_adaptors, AdaptedModel, Radius};
use crate::error::{Error, Result};
use crate::network::{BlockId, Model};
use crate::seed;
use crate::tensor::{self, LrSchedule, Tape, Tensor};
use serde::Serialize;
use std::hint::black_box;
use std::sync::Mutex;
use std::time::Instant;

/// Serializes latency trials across threads; concurrent measurement would
/// contaminate the timings.
static LATENCY_LOCK: Mutex<()> = Mutex::new(());

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LatencyStats {
    pub mean_s: f64,
    pub std_s: f64,
    pub trials: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LatencyCfg {
    pub batch: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for LatencyCfg {
    fn default() -> Self {
        LatencyCfg { batch: 64, trials: 500, warmup: 50, seed: 0 }
    }
}

/// Wall-clock forward latency on a fixed seeded batch, single-threaded.
/// Warmup passes are run and discarded; the reported mean and population
/// std cover `trials` timed passes.
pub fn measure_latency(model: &Model, cfg: &LatencyCfg) -> Result<LatencyStats> {
    if cfg.trials == 0 || cfg.batch == 0 {
        return Err(Error::InvalidArg("latency needs trials >= 1 and batch >= 1".into()));
    }
    let _guard = LATENCY_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = seed::rng(cfg.seed, "latency_input", 0);
    let x = Tensor::randn(cfg.batch, model.spec.input_dim, 1.0, &mut rng);
    for _ in 0..cfg.warmup {
        black_box(model.forward(black_box(&x))?);
    }
    let mut times = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let t0 = Instant::now();
        black_box(model.forward(black_box(&x))?);
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(sample_stats(&times))
}

/// Forward latencies of two models measured in one window: timed passes
/// alternate between them, so drift in the timing environment (frequency
/// scaling, noisy neighbors) moves both means together instead of biasing
/// whichever model was measured later. Latency differences as small as a
/// few percent are only trustworthy measured this way.
pub fn measure_latency_paired(
    a: &Model,
    b: &Model,
    cfg: &LatencyCfg,
) -> Result<(LatencyStats, LatencyStats)> {
    if cfg.trials == 0 || cfg.batch == 0 {
        return Err(Error::InvalidArg("latency needs trials >= 1 and batch >= 1".into()));
    }
    if a.spec.input_dim != b.spec.input_dim {
        return Err(Error::Shape("paired latency needs matching input dims".into()));
    }
    let _guard = LATENCY_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = seed::rng(cfg.seed, "latency_input", 0);
    let x = Tensor::randn(cfg.batch, a.spec.input_dim, 1.0, &mut rng);
    for _ in 0..cfg.warmup {
        black_box(a.forward(black_box(&x))?);
        black_box(b.forward(black_box(&x))?);
    }
    let mut ta = Vec::with_capacity(cfg.trials);
    let mut tb = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let t0 = Instant::now();
        black_box(a.forward(black_box(&x))?);
        ta.push(t0.elapsed().as_secs_f64());
        let t0 = Instant::now();
        black_box(b.forward(black_box(&x))?);
        tb.push(t0.elapsed().as_secs_f64());
    }
    Ok((sample_stats(&ta), sample_stats(&tb)))
}

fn sample_stats(times: &[f64]) -> LatencyStats {
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    LatencyStats { mean_s: mean, std_s: var.sqrt(), trials: times.len() }
}

/// Floor for the relative latency reduction. Measurement noise can make a
/// pruned model look no faster than the original; the ratio is clamped here
/// so scores stay finite, and the clamp is reported.
pub const TAU_FLOOR: f64 = 1e-6;

/// Relative latency reduction `(orig - pruned) / orig`, clamped to
/// [`TAU_FLOOR`]. The flag reports whether clamping fired.
pub fn latency_ratio(lat_original_s: f64, lat_pruned_s: f64) -> Result<(f64, bool)> {
    if !(lat_original_s > 0.0) {
        return Err(Error::InvalidArg(format!(
            "original latency must be positive, got {lat_original_s}"
        )));
    }
    let tau = (lat_original_s - lat_pruned_s) / lat_original_s;
    if tau < TAU_FLOOR {
        log::warn!(
            "latency reduction {tau:.3e} below floor (orig {lat_original_s:.3e}s, \
             pruned {lat_pruned_s:.3e}s); clamping to {TAU_FLOOR:.0e}"
        );
        return Ok((TAU_FLOOR, true));
    }
    Ok((tau, false))
}

/// Score of one block: recoverability per unit of latency reduction.
/// Lower means drop earlier.
pub fn pruning_score(r: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArg(format!("latency reduction must be positive, got {tau}")));
    }
    if !(r >= 0.0) {
        return Err(Error::InvalidArg(format!("recoverability must be nonnegative, got {r}")));
    }
    Ok(r / tau)
}

#[derive(Clone, Debug)]
pub struct RecoverCfg {
    pub radius: Radius,
    pub iters: usize,
    pub base_lr: f64,
    pub batch: usize,
    /// Train on the squared feature error divided by the mean squared
    /// reference feature instead of the raw error. Keeps the usable
    /// learning-rate window independent of the teacher's feature scale;
    /// the reported recoverability is raw either way.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for RecoverCfg {
    fn default() -> Self {
        RecoverCfg {
            radius: Radius::All,
            iters: 1000,
            base_lr: 0.02,
            batch: 64,
            normalize: false,
            seed: 0,
        }
    }
}

pub struct Recovery {
    pub r: f64,
    pub adapted: AdaptedModel,
    pub trace: Vec<f64>,
}

/// Loss scale for mimicking training: 1 raw, or the inverse mean squared
/// reference feature when normalizing. A zero-feature reference falls back
/// to raw.
pub(crate) fn training_beta(ref_feat: &Tensor, normalize: bool) -> f64 {
    if !normalize {
        return 1.0;
    }
    let n = ref_feat.data().len();
    let ms = ref_feat.data().iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    if ms > 0.0 {
        1.0 / ms
    } else {
        1.0
    }
}

/// Recoverability of one block: drop it from `base`, insert identity
/// adaptors, and train only the adaptors to mimic `reference` features on
/// the tiny set. Returns the final feature error over the whole tiny set.
///
/// In one-shot scoring `base` and `reference` are both the teacher; a
/// greedy loop passes the partially pruned model as `base` while the
/// mimicking target stays the intact teacher.
pub fn recoverability(
    reference: &Model,
    base: &Model,
    block: BlockId,
    tiny_x: &Tensor,
    cfg: &RecoverCfg,
) -> Result<Recovery> {
    if tiny_x.rows() == 0 {
        return Err(Error::InvalidArg("empty tiny set".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArg("batch must be positive".into()));
    }
    let mut pruned = base.clone();
    drop_block(&mut pruned, block)?;
    let mut adapted = insert_adaptors(&pruned, block, cfg.radius)?;

    let ref_feat = reference.feature(tiny_x)?;
    let beta = training_beta(&ref_feat, cfg.normalize);
    let b = cfg.batch.min(tiny_x.rows());
    let sched = LrSchedule::new(cfg.base_lr, cfg.iters);
    let mut trace = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let mut rng = seed::rng(cfg.seed, "recover_batch", it as u64);
        let rows: Vec<usize> =
            rand::seq::index::sample(&mut rng, tiny_x.rows(), b).iter().collect();
        let xb = tiny_x.select_rows(&rows);
        let tb = ref_feat.select_rows(&rows);

        let mut tape = Tape::new();
        let xid = tape.constant(xb);
        let tp = adapted.register(&mut tape);
        let (fid, _) = adapted.forward_on(&mut tape, &tp, xid)?;
        let tid = tape.constant(tb);
        let loss = tape.feature_mse(fid, tid, beta)?;
        trace.push(tape.scalar(loss)?);
        tape.backward(loss)?;
        adapted.apply_sgd(&tape, &tp, sched.lr(it))?;
    }

    let r = tensor::feature_mse(&adapted.feature(tiny_x)?, &ref_feat, 1.0)?;
    Ok(Recovery { r, adapted, trace })
}

#[derive(Clone, Debug)]
pub struct ScoreCfg {
    pub recover: RecoverCfg,
    pub latency: LatencyCfg,
}

/// One row of the scoring table.
#[derive(Clone, Debug, Serialize)]
pub struct BlockScore {
    pub block: String,
    #[serde(skip)]
    pub id: BlockId,
    pub recoverability: f64,
    pub latency_pruned_s: f64,
    pub tau: f64,
    pub tau_clamped: bool,
    pub score: f64,
}

/// Score every live block of `base` independently: recoverability against
/// `reference` features, latency reduction against `base` itself. Each
/// drop's latency is measured paired with `base` so the ratio is immune to
/// drift across the scoring run.
pub fn score_blocks(
    reference: &Model,
    base: &Model,
    tiny_x: &Tensor,
    cfg: &ScoreCfg,
) -> Result<(LatencyStats, Vec<BlockScore>)> {
    let lat_o = measure_latency(base, &cfg.latency)?;
    let all_ids = base.spec.block_ids();
    let mut out = Vec::new();
    for id in base.live_blocks() {
        let pos = all_ids.iter().position(|&b| b == id).unwrap() as u64;
        let mut rc = cfg.recover.clone();
        rc.seed = seed::derive(cfg.recover.seed, "score_block", pos);
        let rec = recoverability(reference, base, id, tiny_x, &rc)?;

        let mut pruned = base.clone();
        drop_block(&mut pruned, id)?;
        let (pair_o, lat_p) = measure_latency_paired(base, &pruned, &cfg.latency)?;
        let (tau, tau_clamped) = latency_ratio(pair_o.mean_s, lat_p.mean_s)?;
        out.push(BlockScore {
            block: id.to_string(),
            id,
            recoverability: rec.r,
            latency_pruned_s: lat_p.mean_s,
            tau,
            tau_clamped,
            score: pruning_score(rec.r, tau)?,
        });
    }
    Ok((lat_o, out))
}

/// Ascending by score, block position breaking exact ties.
pub fn rank_by_score(scores: &[BlockScore]) -> Vec<BlockScore> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.id.cmp(&b.id)));
    ranked
}

#[derive(Clone, Debug)]
pub struct CompressCfg {
    pub k: usize,
    pub score: ScoreCfg,
    pub finetune: FinetuneCfg,
    /// Rescore the survivors after each drop instead of scoring once.
    pub greedy: bool,
}

pub struct CompressOutcome {
    /// Scoring tables: one for one-shot selection, one per round for greedy.
    pub score_rounds: Vec<Vec<BlockScore>>,
    /// Dropped blocks, in drop order.
    pub chosen: Vec<BlockId>,
    /// The pruned model after finetuning.
    pub model: Model,
    pub finetune_trace: Vec<f64>,
    pub lat_original: LatencyStats,
    pub lat_final: LatencyStats,
    /// Latency reduction of the final model, measured paired with the
    /// teacher in one window.
    pub tau_final: f64,
}

/// Score, drop the `k` cheapest blocks, and finetune the pruned model
/// against the teacher on the tiny set.
pub fn practise_compress(
    teacher: &Model,
    tiny_x: &Tensor,
    tiny_labels: &[u32],
    cfg: &CompressCfg,
) -> Result<CompressOutcome> {
    let live = teacher.live_blocks().len();
    if cfg.k == 0 || cfg.k > live {
        return Err(Error::InvalidArg(format!(
            "cannot drop {} of {live} live blocks",
            cfg.k
        )));
    }
    let lat_original = measure_latency(teacher, &cfg.score.latency)?;
    let mut current = teacher.clone();
    let mut score_rounds = Vec::new();
    let mut chosen = Vec::new();
    if cfg.greedy {
        for round in 0..cfg.k {
            let mut sc = cfg.score.clone();
            sc.recover.seed = seed::derive(cfg.score.recover.seed, "greedy_round", round as u64);
            let (_, scores) = score_blocks(teacher, &current, tiny_x, &sc)?;
            let best = rank_by_score(&scores)[0].id;
            drop_block(&mut current, best)?;
            chosen.push(best);
            score_rounds.push(scores);
        }
    } else {
        let (_, scores) = score_blocks(teacher, &current, tiny_x, &cfg.score)?;
        for row in rank_by_score(&scores).iter().take(cfg.k) {
            drop_block(&mut current, row.id)?;
            chosen.push(row.id);
        }
        score_rounds.push(scores);
    }
    let (model, finetune_trace) =
        finetune(teacher, current, tiny_x, tiny_labels, &cfg.finetune)?;
    let (pair_o, lat_final) = measure_latency_paired(teacher, &model, &cfg.score.latency)?;
    let (tau_final, _) = latency_ratio(pair_o.mean_s, lat_final.mean_s)?;
    Ok(CompressOutcome {
        score_rounds,
        chosen,
        model,
        finetune_trace,
        lat_original,
        lat_final,
        tau_final,
    })
}
