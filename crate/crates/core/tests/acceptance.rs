//! Acceptance suite: one criterion per numbered check, one printed line per
//! criterion, every line carrying the measured runtime. The test fails if
//! any criterion fails its property or its runtime budget.
//!
//! Shared setup (teachers, datasets, tiny sets) is built once up front;
//! each criterion's timed section covers only the work it adds on top.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use blockdrop::compress::{self, Radius};
use blockdrop::data::{self, Dataset};
use blockdrop::eval;
use blockdrop::landscape::{loss_curve, LossEval};
use blockdrop::network::{build, BlockId, Model, NetSpec, StageSpec};
use blockdrop::practise::{
    finetune, measure_latency_paired, practise_compress, CompressCfg, CompressOutcome,
    FinetuneMethod,
};
use blockdrop::presets;
use blockdrop::seed;
use blockdrop::tensor::{gradcheck, NodeId, Tape, Tensor};
use blockdrop::theory::{
    self,
    variance::{
        classification_variance_sweep_n, classification_variance_sweep_temperature,
        compare_stability, verify_regression_variance, ClassificationCfg, RegressionCfg,
    },
};

struct Verdict {
    num: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn verdict(
    out: &mut Vec<Verdict>,
    num: usize,
    name: &'static str,
    budget_s: Option<f64>,
    started: Instant,
    pass: bool,
    detail: String,
) {
    let secs = started.elapsed().as_secs_f64();
    let mut pass = pass;
    let mut detail = detail;
    if let Some(b) = budget_s {
        if secs > b {
            pass = false;
            write!(detail, "; over {b:.0}s budget").unwrap();
        }
    }
    out.push(Verdict { num, name, pass, detail, secs });
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&x, &y| vals[x].total_cmp(&vals[y]));
        let mut r = vec![0.0; vals.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let mean = (a.len() as f64 - 1.0) / 2.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        num += (ra[i] - mean) * (rb[i] - mean);
        da += (ra[i] - mean) * (ra[i] - mean);
        db += (rb[i] - mean) * (rb[i] - mean);
    }
    num / (da * db).sqrt()
}

/// Small random architecture, varied in every dimension that affects layer
/// plumbing: depth, widths, stage count, classes.
fn random_spec(t: u64) -> NetSpec {
    let m = |k: u64, lo: usize, span: u64| lo + (seed::derive(t, "spec_dim", k) % span) as usize;
    let stages = (0..m(0, 1, 3))
        .map(|s| StageSpec { width: m(10 + s as u64, 4, 9), blocks: m(20 + s as u64, 1, 3) })
        .collect();
    NetSpec {
        input_dim: m(1, 3, 8),
        stages,
        num_classes: m(2, 2, 4),
        seed: seed::derive(t, "spec_init", 0),
    }
}

/// Gradient check driver: `wire` builds the same scalar loss on any tape,
/// analytic gradients come from one backward pass, numeric ones from
/// central differences through fresh tapes.
fn worst_grad_err<F>(inputs: &[Tensor], wire: F) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = wire(&mut tape, &ids);
    tape.backward(loss).unwrap();
    let numeric = gradcheck::finite_diff(
        |ins| {
            let mut t = Tape::new();
            let ids: Vec<NodeId> = ins.iter().map(|x| t.leaf(x.clone(), true)).collect();
            let l = wire(&mut t, &ids);
            t.scalar(l)
        },
        inputs,
        1e-5,
    )
    .unwrap();
    ids.iter()
        .zip(&numeric)
        .map(|(id, num)| gradcheck::max_rel_err(tape.grad(*id).unwrap(), num, 1e-6))
        .fold(0.0, f64::max)
}

/// Everything the pipeline criteria share for one benchmark seed.
struct SeedRun {
    sd: u64,
    teacher: Model,
    ds: Dataset,
    tiny: Dataset,
    outcome: CompressOutcome,
    method_accs: [f64; 3],
    d3_acc: f64,
    fp_acc: f64,
    fp_ratio: f64,
    tau_d3: f64,
    tau_fp: f64,
}

fn paired_tau(reference: &Model, m: &Model, sd: u64) -> f64 {
    let lcfg = presets::score_cfg(sd).latency;
    let (po, pm) = measure_latency_paired(reference, m, &lcfg).unwrap();
    1.0 - pm.mean_s / po.mean_s
}

/// Run the full pipeline for one seed plus the two baselines it is compared
/// against: drop-first-3, and filter pruning at the ratio whose measured
/// latency reduction lands closest to the pipeline's own.
fn run_seed(sd: u64) -> SeedRun {
    let (teacher, ds) = presets::benchmark_teacher(sd).unwrap();
    let tiny = presets::benchmark_tiny(&ds, sd).unwrap();
    let tiny_x = tiny.train_x();
    let tiny_y = tiny.train_labels();
    let held_x = ds.heldout_x();
    let held_y = ds.heldout_labels();

    let cfg = CompressCfg {
        k: 3,
        score: presets::score_cfg(sd),
        finetune: presets::finetune_cfg(
            FinetuneMethod::FeatureMimic,
            seed::derive(sd, "method_finetune", 0),
        ),
        greedy: false,
    };
    let outcome = practise_compress(&teacher, &tiny_x, &tiny_y, &cfg).unwrap();

    let mut pruned = teacher.clone();
    for &b in &outcome.chosen {
        compress::drop_block(&mut pruned, b).unwrap();
    }
    let mut method_accs = [0.0f64; 3];
    method_accs[0] = eval::accuracy(&outcome.model, &held_x, &held_y).unwrap();
    for (j, m) in [
        FinetuneMethod::Kd { temperature: presets::KD_TEMPERATURE },
        FinetuneMethod::Bp,
    ]
    .into_iter()
    .enumerate()
    {
        let fcfg = presets::finetune_cfg(m, seed::derive(sd, "method_finetune", j as u64 + 1));
        let (tuned, _) = finetune(&teacher, pruned.clone(), &tiny_x, &tiny_y, &fcfg).unwrap();
        method_accs[j + 1] = eval::accuracy(&tuned, &held_x, &held_y).unwrap();
    }

    let mut d3 = teacher.clone();
    for i in 0..3 {
        compress::drop_block(&mut d3, BlockId { stage: 0, index: i }).unwrap();
    }
    let tau_d3 = paired_tau(&teacher, &d3, sd);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for step in 1..20u32 {
        let r = f64::from(step) * 0.05;
        let t = paired_tau(&teacher, &compress::prune_filters_shrunk(&teacher, r).unwrap(), sd);
        if (t - outcome.tau_final).abs() < best.0 {
            best = ((t - outcome.tau_final).abs(), r, t);
        }
    }
    let (_, fp_ratio, tau_fp) = best;
    let fp = compress::prune_filters_shrunk(&teacher, fp_ratio).unwrap();

    let fcfg = presets::finetune_cfg(
        FinetuneMethod::FeatureMimic,
        seed::derive(sd, "pipeline_finetune", 1),
    );
    let (d3_tuned, _) = finetune(&teacher, d3, &tiny_x, &tiny_y, &fcfg).unwrap();
    let d3_acc = eval::accuracy(&d3_tuned, &held_x, &held_y).unwrap();
    let fcfg = presets::finetune_cfg(
        FinetuneMethod::FeatureMimic,
        seed::derive(sd, "pipeline_finetune", 2),
    );
    let (fp_tuned, _) = finetune(&teacher, fp, &tiny_x, &tiny_y, &fcfg).unwrap();
    let fp_acc = eval::accuracy(&fp_tuned, &held_x, &held_y).unwrap();

    SeedRun { sd, teacher, ds, tiny, outcome, method_accs, d3_acc, fp_acc, fp_ratio, tau_d3, tau_fp }
}

#[test]
fn acceptance_criteria() {
    let mut v: Vec<Verdict> = Vec::new();

    // 1: adapted and fused networks compute the same function.
    let t0 = Instant::now();
    let mut worst_fuse = 0.0f64;
    for t in 0..100u64 {
        let spec = random_spec(t);
        let mut rng = seed::rng(spec.seed, "fusion_check", 0);
        let mut m = build(&spec).unwrap();
        let live = m.live_blocks();
        let b = live[(t as usize) % live.len()];
        compress::drop_block(&mut m, b).unwrap();
        let radius = if t % 2 == 0 { Radius::All } else { Radius::Blocks((t % 3) as usize) };
        let mut am = compress::insert_adaptors(&m, b, radius).unwrap();
        for ad in &mut am.adaptors {
            let dim = ad.a.rows();
            let noise = Tensor::randn(dim, dim, 0.4, &mut rng);
            for (a, n) in ad.a.data_mut().iter_mut().zip(noise.data()) {
                *a += n;
            }
        }
        let fused = am.fuse().unwrap();
        let x = Tensor::randn(8, spec.input_dim, 1.0, &mut rng);
        let (fa, la) = am.forward(&x).unwrap();
        let (ff, lf) = fused.forward(&x).unwrap();
        worst_fuse = worst_fuse.max(max_abs_diff(&fa, &ff)).max(max_abs_diff(&la, &lf));
    }
    verdict(
        &mut v,
        1,
        "adaptor fusion exactness",
        Some(10.0),
        t0,
        worst_fuse < 1e-9,
        format!("max |adapted - fused| {worst_fuse:.2e} over 100 random models"),
    );

    // 2: zeroing a block and architecturally dropping it agree.
    let t0 = Instant::now();
    let mut worst_zero = 0.0f64;
    for t in 100..200u64 {
        let spec = random_spec(t);
        let mut rng = seed::rng(spec.seed, "zero_drop_check", 0);
        let m = build(&spec).unwrap();
        let live = m.live_blocks();
        let b = live[(t as usize) % live.len()];
        let mut zeroed = m.clone();
        compress::zero_block(&mut zeroed, b).unwrap();
        let mut dropped = m.clone();
        compress::drop_block(&mut dropped, b).unwrap();
        let x = Tensor::randn(8, spec.input_dim, 1.0, &mut rng);
        let (fz, lz) = zeroed.forward(&x).unwrap();
        let (fd, ld) = dropped.forward(&x).unwrap();
        worst_zero = worst_zero.max(max_abs_diff(&fz, &fd)).max(max_abs_diff(&lz, &ld));
    }
    verdict(
        &mut v,
        2,
        "zero and drop equivalence",
        Some(10.0),
        t0,
        worst_zero < 1e-12,
        format!("max |zeroed - dropped| {worst_zero:.2e} over 100 random models"),
    );

    // 3: every tape op against central finite differences.
    let t0 = Instant::now();
    let mut worst_grad = 0.0f64;
    for rep in 0..20u64 {
        let mut rng = seed::rng(rep, "grad_check", 0);
        let a = Tensor::randn(3, 4, 1.0, &mut rng);
        let b = Tensor::randn(4, 2, 1.0, &mut rng);
        worst_grad = worst_grad.max(worst_grad_err(&[a, b], |t, ids| {
            let m = t.matmul(ids[0], ids[1]).unwrap();
            t.sum(m)
        }));

        let a = Tensor::randn(3, 4, 1.0, &mut rng);
        let b = Tensor::randn(3, 4, 1.0, &mut rng);
        worst_grad = worst_grad.max(worst_grad_err(&[a, b], |t, ids| {
            let s = t.add(ids[0], ids[1]).unwrap();
            let r = t.relu(s);
            t.sum(r)
        }));

        let m = Tensor::randn(4, 3, 1.0, &mut rng);
        let row = Tensor::randn(1, 3, 1.0, &mut rng);
        worst_grad = worst_grad.max(worst_grad_err(&[m, row], |t, ids| {
            let s = t.add_row(ids[0], ids[1]).unwrap();
            t.sum(s)
        }));

        let s = Tensor::randn(5, 3, 1.0, &mut rng);
        let tt = Tensor::randn(5, 3, 1.0, &mut rng);
        worst_grad = worst_grad.max(worst_grad_err(&[s, tt], |t, ids| {
            t.feature_mse(ids[0], ids[1], 0.7).unwrap()
        }));

        let logits = Tensor::randn(6, 4, 1.5, &mut rng);
        let labels: Vec<u32> = (0..6).map(|i| (seed::derive(rep, "grad_label", i) % 4) as u32).collect();
        for temp in [1.0, 3.0] {
            let lab = labels.clone();
            worst_grad = worst_grad.max(worst_grad_err(&[logits.clone()], |t, ids| {
                t.softmax_ce_hard(ids[0], &lab, temp).unwrap()
            }));
        }

        let mut targets = Tensor::randn(6, 4, 1.0, &mut rng);
        for r in 0..6 {
            let mut z = 0.0;
            for c in 0..4 {
                let e = targets.get(r, c).exp();
                targets.set(r, c, e);
                z += e;
            }
            for c in 0..4 {
                targets.set(r, c, targets.get(r, c) / z);
            }
        }
        for temp in [1.0, 2.5] {
            let tg = targets.clone();
            worst_grad = worst_grad.max(worst_grad_err(&[logits.clone()], |t, ids| {
                t.softmax_ce_soft(ids[0], &tg, temp).unwrap()
            }));
        }
    }
    verdict(
        &mut v,
        3,
        "gradient correctness",
        Some(30.0),
        t0,
        worst_grad < 1e-4,
        format!("worst relative error {worst_grad:.2e} across all ops"),
    );

    // 4: output divergence never exceeds joint divergence.
    let t0 = Instant::now();
    let bound = theory::verify_marginal_kl_bound(4, 6, 10_000, presets::PRIMARY_SEED).unwrap();
    verdict(
        &mut v,
        4,
        "marginal KL bound",
        Some(30.0),
        t0,
        bound.violations == 0,
        format!("{} violations in {} joints, min margin {:.2e}", bound.violations, bound.trials, bound.min_margin),
    );

    // 5: joint divergence decomposition is an identity.
    let t0 = Instant::now();
    let ident = theory::verify_joint_kl_decomposition(4, 6, 1000, presets::PRIMARY_SEED).unwrap();
    verdict(
        &mut v,
        5,
        "KL decomposition identity",
        Some(10.0),
        t0,
        ident.max_abs_err < 1e-10,
        format!("max identity error {:.2e} over {} joints", ident.max_abs_err, ident.trials),
    );

    // 6: regression estimator spread matches the closed-form prediction.
    let t0 = Instant::now();
    let reg = verify_regression_variance(&RegressionCfg {
        n: 100,
        beta: 0.5,
        trials: 2000,
        seed: presets::PRIMARY_SEED,
        ..RegressionCfg::default()
    })
    .unwrap();
    let reg_ok = (0.85..=1.15).contains(&reg.ratio_w) && (0.85..=1.15).contains(&reg.ratio_b);
    verdict(
        &mut v,
        6,
        "regression estimator variance",
        Some(60.0),
        t0,
        reg_ok,
        format!("empirical/predicted ratio w {:.3}, b {:.3}", reg.ratio_w, reg.ratio_b),
    );

    // 7: classification variance scales as 1/n and falls with temperature.
    let t0 = Instant::now();
    let gentle = ClassificationCfg { trials: 2000, seed: presets::PRIMARY_SEED, ..ClassificationCfg::default() };
    let sweep = classification_variance_sweep_n(&gentle, &[50, 200, 800]).unwrap();
    let r1 = sweep[0].empirical_var_w / sweep[1].empirical_var_w;
    let r2 = sweep[1].empirical_var_w / sweep[2].empirical_var_w;
    let scale_ok = (3.2..=4.8).contains(&r1) && (3.2..=4.8).contains(&r2);
    let confident = ClassificationCfg {
        teacher_w: [2.0, -2.0],
        teacher_b: [1.0, -1.0],
        trials: 2000,
        seed: presets::PRIMARY_SEED,
        ..ClassificationCfg::default()
    };
    let temps = classification_variance_sweep_temperature(&confident, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let temp_ok = temps.windows(2).all(|w| w[1].empirical_var_w < w[0].empirical_var_w);
    verdict(
        &mut v,
        7,
        "classification variance scaling",
        Some(300.0),
        t0,
        scale_ok && temp_ok,
        format!(
            "n ratios {r1:.2}, {r2:.2} (want 4 within 20%); temperature vars {}",
            temps.iter().map(|c| format!("{:.4}", c.empirical_var_w)).collect::<Vec<_>>().join(" > ")
        ),
    );

    // 8: feature fitting is more stable than softmax fitting on a confident
    // teacher, at matched sample count.
    let t0 = Instant::now();
    let mut stab_details = Vec::new();
    let mut stab_ok = true;
    for &sd in &presets::BENCHMARK_SEEDS {
        let cmp = compare_stability(200, 0.5, 1e-2, 1000, sd).unwrap();
        stab_ok &= cmp.empirical_regression_more_stable;
        stab_details.push(format!(
            "{sd}: {:.2e} vs {:.2e}",
            cmp.regression.empirical_var_w, cmp.classification.empirical_var_w
        ));
    }
    verdict(
        &mut v,
        8,
        "stability ordering",
        Some(120.0),
        t0,
        stab_ok,
        stab_details.join("; "),
    );

    // 13 runs before 9-12 because they reuse its per-seed pipeline outputs.
    let t0 = Instant::now();
    let runs: Vec<SeedRun> = presets::BENCHMARK_SEEDS.iter().map(|&sd| run_seed(sd)).collect();
    let mut both = 0usize;
    let mut order_details = Vec::new();
    for r in &runs {
        let [fm, kd, bp] = r.method_accs;
        let part1 = fm > kd && kd > bp;
        let part2 = fm >= r.d3_acc && r.d3_acc >= r.fp_acc;
        if part1 && part2 {
            both += 1;
        }
        order_details.push(format!(
            "{}: fm {fm:.3} kd {kd:.3} bp {bp:.3} | pipeline {fm:.3} (tau {:.2}) first3 {:.3} (tau {:.2}) filter {:.3} (ratio {:.2}, tau {:.2})",
            r.sd, r.outcome.tau_final, r.d3_acc, r.tau_d3, r.fp_acc, r.fp_ratio, r.tau_fp
        ));
    }
    verdict(
        &mut v,
        13,
        "method ordering",
        Some(900.0),
        t0,
        both >= 4,
        format!("{both}/5 seeds hold both orderings; {}", order_details.join("; ")),
    );

    // 9: zeroing the chosen blocks interpolates more convexly than zeroing
    // filters at the same effective-compute reduction.
    let t0 = Instant::now();
    let mut convex_ok = 0usize;
    let mut convex_details = Vec::new();
    for r in &runs {
        let held_x = r.ds.heldout_x();
        let held_y = r.ds.heldout_labels();
        let ce = LossEval::CrossEntropy { x: &held_x, labels: &held_y };
        let mut bz = r.teacher.clone();
        let mut dropped = r.teacher.clone();
        for &b in &r.outcome.chosen {
            compress::zero_block(&mut bz, b).unwrap();
            compress::drop_block(&mut dropped, b).unwrap();
        }
        let removed = r.teacher.count_flops() - dropped.count_flops();
        let ratio = compress::matched_filter_ratio(&r.teacher, removed).unwrap();
        let mut fz = r.teacher.clone();
        compress::prune_filters_zeroed(&mut fz, ratio).unwrap();
        let curve_b = loss_curve(&r.teacher, &r.teacher.flatten(), &bz.flatten(), &ce, 21).unwrap();
        let curve_f = loss_curve(&r.teacher, &r.teacher.flatten(), &fz.flatten(), &ce, 21).unwrap();
        let (gap_b, gap_f) = (curve_b.convexity_gap(), curve_f.convexity_gap());
        if gap_b < gap_f {
            convex_ok += 1;
        }
        convex_details.push(format!("{}: {gap_b:.3} vs {gap_f:.3}", r.sd));
    }
    verdict(
        &mut v,
        9,
        "block vs filter interpolation convexity",
        Some(120.0),
        t0,
        convex_ok >= 4,
        format!("{convex_ok}/5 seeds; gaps {}", convex_details.join("; ")),
    );

    // 10: pruned-to-finetuned paths stay within the convexity tolerance.
    let t0 = Instant::now();
    let mut path_ok = true;
    let mut path_details = Vec::new();
    for r in &runs {
        let held_x = r.ds.heldout_x();
        let teacher_feat = r.teacher.feature(&held_x).unwrap();
        let fmse = LossEval::FeatureMse { x: &held_x, teacher_features: &teacher_feat };
        let mut pruned = r.teacher.clone();
        for &b in &r.outcome.chosen {
            compress::drop_block(&mut pruned, b).unwrap();
        }
        let curve =
            loss_curve(&pruned, &pruned.flatten(), &r.outcome.model.flatten(), &fmse, 21).unwrap();
        let (l0, l1) = curve.endpoint_losses();
        let gap = curve.convexity_gap();
        let ok = gap <= 0.02 * (l0 - l1);
        path_ok &= ok;
        path_details.push(format!("{}: gap {gap:.3} vs {:.3}", r.sd, 0.02 * (l0 - l1)));
    }
    verdict(
        &mut v,
        10,
        "finetune path convexity",
        Some(120.0),
        t0,
        path_ok,
        path_details.join("; "),
    );

    // 11: the midpoint of two disjoint-data finetunes is as good as either.
    let t0 = Instant::now();
    let mut mid_ok = true;
    let mut mid_details = Vec::new();
    for r in &runs {
        let held_x = r.ds.heldout_x();
        let held_y = r.ds.heldout_labels();
        let ce = LossEval::CrossEntropy { x: &held_x, labels: &held_y };
        let mut pruned = r.teacher.clone();
        for &b in &r.outcome.chosen {
            compress::drop_block(&mut pruned, b).unwrap();
        }
        let (ta, tb) =
            data::sample_tiny_disjoint(&r.ds, presets::TINY_SIZE, seed::derive(r.sd, "disjoint", 0))
                .unwrap();
        let cfg_a = presets::finetune_cfg(
            FinetuneMethod::FeatureMimic,
            seed::derive(r.sd, "disjoint_finetune", 0),
        );
        let cfg_b = presets::finetune_cfg(
            FinetuneMethod::FeatureMimic,
            seed::derive(r.sd, "disjoint_finetune", 1),
        );
        let (ma, _) =
            finetune(&r.teacher, pruned.clone(), &ta.train_x(), &ta.train_labels(), &cfg_a).unwrap();
        let (mb, _) =
            finetune(&r.teacher, pruned.clone(), &tb.train_x(), &tb.train_labels(), &cfg_b).unwrap();
        let curve = loss_curve(&pruned, &ma.flatten(), &mb.flatten(), &ce, 3).unwrap();
        let (la, lb) = curve.endpoint_losses();
        let lmid = curve.points[1].loss;
        let ok = lmid <= 1.05 * la.min(lb);
        mid_ok &= ok;
        mid_details.push(format!("{}: mid {lmid:.3} vs endpoints {la:.3}/{lb:.3}", r.sd));
    }
    verdict(
        &mut v,
        11,
        "disjoint finetune midpoint",
        Some(120.0),
        t0,
        mid_ok,
        mid_details.join("; "),
    );

    // 12: the score table ranks blocks like the brute-force oracle does.
    let t0 = Instant::now();
    let primary = runs.iter().find(|r| r.sd == presets::PRIMARY_SEED).unwrap();
    let tiny_x = primary.tiny.train_x();
    let tiny_y = primary.tiny.train_labels();
    let held_x = primary.ds.heldout_x();
    let held_y = primary.ds.heldout_labels();
    let scores = &primary.outcome.score_rounds[0];
    let mut svals = Vec::new();
    let mut errors = Vec::new();
    for (pos, row) in scores.iter().enumerate() {
        let mut student = primary.teacher.clone();
        compress::drop_block(&mut student, row.id).unwrap();
        let fcfg = presets::finetune_cfg(
            FinetuneMethod::FeatureMimic,
            seed::derive(primary.sd, "oracle_finetune", pos as u64),
        );
        let (tuned, _) = finetune(&primary.teacher, student, &tiny_x, &tiny_y, &fcfg).unwrap();
        let acc = eval::accuracy(&tuned, &held_x, &held_y).unwrap();
        svals.push(row.score);
        errors.push(1.0 - acc);
    }
    let rho_err = spearman(&svals, &errors);
    let accs: Vec<f64> = errors.iter().map(|e| 1.0 - e).collect();
    let rho_acc = spearman(&svals, &accs);
    verdict(
        &mut v,
        12,
        "score consistency with oracle",
        Some(600.0),
        t0,
        rho_err >= 0.7,
        format!("spearman vs oracle error {rho_err:.3} (vs accuracy {rho_acc:.3}), {} blocks", svals.len()),
    );

    // 14: every single-block drop speeds the model up, and dropping the
    // chosen set beats the best single drop.
    let t0 = Instant::now();
    let mut lat_ok = true;
    let mut lat_details = Vec::new();
    for r in &runs {
        let scores = &r.outcome.score_rounds[0];
        let single_ok = scores.iter().all(|s| s.tau > 0.0 && !s.tau_clamped);
        let max_single = scores.iter().map(|s| s.tau).fold(0.0, f64::max);
        let mut dropped = r.teacher.clone();
        for &b in &r.outcome.chosen {
            compress::drop_block(&mut dropped, b).unwrap();
        }
        let tau_k = paired_tau(&r.teacher, &dropped, r.sd);
        let ok = single_ok && tau_k >= max_single;
        lat_ok &= ok;
        lat_details.push(format!("{}: max single {max_single:.3}, k-drop {tau_k:.3}", r.sd));
    }
    verdict(
        &mut v,
        14,
        "latency sanity",
        Some(300.0),
        t0,
        lat_ok,
        lat_details.join("; "),
    );

    // 15: identical config and seed reproduce every non-timing output byte
    // for byte, across all five subcommands.
    let t0 = Instant::now();
    let (pass15, detail15) = determinism_check();
    verdict(&mut v, 15, "determinism", None, t0, pass15, detail15);

    v.sort_by_key(|x| x.num);
    let mut failed = Vec::new();
    for x in &v {
        let tag = if x.pass { "[PASS]" } else { "[FAIL]" };
        println!("{tag} criterion {}: {} ({:.1}s) - {}", x.num, x.name, x.secs, x.detail);
        if !x.pass {
            failed.push(x.num);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

const FAST_SETS: &[&str] = &[
    "teacher.iters=300",
    "compress.recover_iters=60",
    "finetune.iters=120",
    "latency.trials=40",
    "latency.warmup=5",
    "landscape.points=7",
];

fn run_cli(dir: &Path, args: &[&str]) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blockdrop"));
    cmd.current_dir(dir).args(args);
    for s in FAST_SETS {
        cmd.arg("--set").arg(s);
    }
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_all_commands(dir: &Path) {
    run_cli(dir, &["train-teacher", "--out-dir", "out_t"]);
    run_cli(dir, &["probe-landscape", "--teacher", "out_t/teacher.json", "--out-dir", "out_p"]);
    run_cli(
        dir,
        &[
            "compress",
            "--teacher",
            "out_t/teacher.json",
            "--out-dir",
            "out_c1",
            "--set",
            "compress.method=curl_like_l2",
            "--set",
            "compress.k=2",
        ],
    );
    run_cli(
        dir,
        &[
            "compress",
            "--teacher",
            "out_t/teacher.json",
            "--out-dir",
            "out_c2",
            "--set",
            "compress.method=drop_first_k",
            "--set",
            "compress.k=2",
        ],
    );
    run_cli(dir, &["verify-theory", "--out-dir", "out_v"]);
    run_cli(dir, &["bench-latency", "--teacher", "out_t/teacher.json", "--out-dir", "out_b"]);
}

fn walk(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Compare one output file across the two runs, ignoring only what timing
/// legitimately changes: the `timing` object in compress metrics and the
/// measured columns of the latency table.
fn files_match(rel: &Path, a: &Path, b: &Path) -> std::result::Result<(), String> {
    let ba = std::fs::read(a).unwrap();
    let bb = std::fs::read(b).unwrap();
    let name = rel.file_name().unwrap().to_string_lossy();
    if name == "metrics.json" {
        let mut ja: serde_json::Value = serde_json::from_slice(&ba).unwrap();
        let mut jb: serde_json::Value = serde_json::from_slice(&bb).unwrap();
        if let Some(o) = ja.as_object_mut() {
            o.remove("timing");
        }
        if let Some(o) = jb.as_object_mut() {
            o.remove("timing");
        }
        if ja != jb {
            return Err(format!("{} differs outside its timing section", rel.display()));
        }
        return Ok(());
    }
    if name == "latency.csv" {
        let strip = |bytes: &[u8]| -> Vec<Vec<String>> {
            String::from_utf8_lossy(bytes)
                .lines()
                .map(|l| l.split(',').take(3).map(str::to_string).collect())
                .collect()
        };
        if strip(&ba) != strip(&bb) {
            return Err(format!("{} differs in a non-timing column", rel.display()));
        }
        return Ok(());
    }
    if ba != bb {
        return Err(format!("{} differs between reruns", rel.display()));
    }
    Ok(())
}

fn determinism_check() -> (bool, String) {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_all_commands(dir_a.path());
    run_all_commands(dir_b.path());
    let files_a = walk(dir_a.path());
    let files_b = walk(dir_b.path());
    if files_a != files_b {
        return (false, format!("file sets differ: {} vs {} entries", files_a.len(), files_b.len()));
    }
    let mut mismatches = Vec::new();
    for rel in &files_a {
        if let Err(e) = files_match(rel, &dir_a.path().join(rel), &dir_b.path().join(rel)) {
            mismatches.push(e);
        }
    }
    if mismatches.is_empty() {
        (true, format!("{} outputs identical across reruns of all 5 commands", files_a.len()))
    } else {
        (false, mismatches.join("; "))
    }
}
