//! End-to-end checks of the command-line surface: every subcommand run as a
//! real subprocess against small configurations, plus the exit-code
//! contract.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FAST: &[&str] = &[
    "teacher.iters=300",
    "compress.recover_iters=60",
    "finetune.iters=120",
    "latency.trials=40",
    "latency.warmup=5",
    "landscape.points=7",
    "theory.kl_trials=500",
    "theory.decomposition_trials=200",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blockdrop"));
    cmd.current_dir(dir).args(args);
    for s in FAST {
        cmd.arg("--set").arg(s);
    }
    cmd.output().unwrap()
}

fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn train(dir: &Path) {
    run_ok(dir, &["train-teacher"]);
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    String::from_utf8(std::fs::read(path).unwrap())
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn train_teacher_writes_checkpoint_metrics_and_config() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    let out = dir.path().join("out");
    for f in ["teacher.json", "metrics.json", "config.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let metrics = read_json(&out.join("metrics.json"));
    let acc = metrics["heldout"]["accuracy"].as_f64().unwrap();
    assert!(acc > 0.5, "teacher heldout accuracy {acc}");
    let cfg = read_json(&out.join("config.json"));
    assert_eq!(cfg["teacher"]["iters"], 300);
}

#[test]
fn probe_landscape_emits_four_curves_spanning_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    run_ok(dir.path(), &["probe-landscape"]);
    let curves = dir.path().join("out/curves");
    let names = [
        "raw_vs_block_zeroed",
        "raw_vs_filter_zeroed",
        "pruned_vs_finetuned",
        "finetune_a_vs_finetune_b",
    ];
    for name in names {
        let rows = read_csv(&curves.join(format!("{name}.csv")));
        assert_eq!(rows[0], ["lambda", "loss"], "{name} header");
        let first: f64 = rows[1][0].parse().unwrap();
        let last: f64 = rows.last().unwrap()[0].parse().unwrap();
        assert_eq!(first, 0.0, "{name} starts at 0");
        assert_eq!(last, 1.0, "{name} ends at 1");
        assert!(rows[1..].iter().all(|r| r[1].parse::<f64>().unwrap().is_finite()));
    }
    let diag = read_json(&dir.path().join("out/diagnostics.json"));
    let entries = diag["curves"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    for e in entries {
        assert!(e["convexity_gap"].is_number());
        assert!(e["loss_leakage"].is_number());
    }
}

#[test]
fn compress_practise_scores_every_live_block() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    run_ok(dir.path(), &["compress"]);
    let rows = read_csv(&dir.path().join("out/scores.csv"));
    assert_eq!(rows.len() - 1, 8, "one score row per live block");
    let metrics = read_json(&dir.path().join("out/metrics.json"));
    assert_eq!(metrics["method"], "practise");
    assert_eq!(metrics["chosen"].as_array().unwrap().len(), 3);
    assert!(metrics["timing"]["tau"].as_f64().unwrap().is_finite());
    assert!(dir.path().join("out/pruned.json").is_file());
}

#[test]
fn compress_drop_first_k_drops_leading_stage_zero_blocks() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    run_ok(
        dir.path(),
        &["compress", "--set", "compress.method=drop_first_k", "--set", "compress.k=2"],
    );
    let metrics = read_json(&dir.path().join("out/metrics.json"));
    let chosen: Vec<&str> =
        metrics["chosen"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(chosen, ["s0b0", "s0b1"]);
    let teacher_flops = metrics["teacher"]["flops"].as_u64().unwrap();
    let final_flops = metrics["final"]["flops"].as_u64().unwrap();
    assert!(final_flops < teacher_flops);
}

#[test]
fn compress_curl_baseline_writes_ascending_scores() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    run_ok(dir.path(), &["compress", "--set", "compress.method=curl_like_l2"]);
    let rows = read_csv(&dir.path().join("out/scores.csv"));
    assert_eq!(rows[0], ["block", "score"]);
    let scores: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(scores.len(), 8);
    assert!(scores.windows(2).all(|w| w[0] <= w[1]), "scores sorted ascending: {scores:?}");
}

#[test]
fn compress_filter_prune_shrinks_the_network() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    run_ok(
        dir.path(),
        &["compress", "--set", "compress.method=filter_prune", "--set", "compress.ratio=0.25"],
    );
    let metrics = read_json(&dir.path().join("out/metrics.json"));
    assert_eq!(metrics["chosen"].as_array().unwrap().len(), 0);
    let teacher_flops = metrics["teacher"]["flops"].as_u64().unwrap();
    let final_flops = metrics["final"]["flops"].as_u64().unwrap();
    assert!(final_flops < teacher_flops);
}

#[test]
fn verify_theory_lists_five_claims_and_seed_changes_only_values() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &["verify-theory"]);
    let report = read_json(&dir.path().join("out/theory_report.json"));
    let claims = report["claims"].as_array().unwrap();
    assert_eq!(claims.len(), 5);
    for c in claims {
        assert_eq!(c["pass"], true, "claim {} failed: {c}", c["claim"]);
    }

    let dir2 = tempfile::tempdir().unwrap();
    run_ok(dir2.path(), &["verify-theory", "--seed", "7"]);
    let report2 = read_json(&dir2.path().join("out/theory_report.json"));
    let claims2 = report2["claims"].as_array().unwrap();
    let flags: Vec<&Value> = claims.iter().map(|c| &c["pass"]).collect();
    let flags2: Vec<&Value> = claims2.iter().map(|c| &c["pass"]).collect();
    assert_eq!(flags, flags2, "pass flags must not depend on the seed");
    assert_ne!(
        claims[0]["empirical"]["min_margin"], claims2[0]["empirical"]["min_margin"],
        "different seeds should explore different joints"
    );
}

#[test]
fn bench_latency_reports_every_block_and_the_original() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    run_ok(dir.path(), &["bench-latency"]);
    let rows = read_csv(&dir.path().join("out/latency.csv"));
    assert_eq!(rows[0], ["block", "flops", "trials", "mean_s", "std_s", "tau"]);
    assert_eq!(rows.len() - 1, 9, "original row plus one per block");
    assert_eq!(rows[1][0], "original");
    assert_eq!(rows[1][5].parse::<f64>().unwrap(), 0.0);
    for r in &rows[1..] {
        assert_eq!(r[2], "40", "trials column mirrors the config");
        assert!(r[3].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn unknown_override_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train-teacher", "--set", "teacher.itres=5"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_method_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    let out = run(dir.path(), &["compress", "--set", "compress.method=magic"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_teacher_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["compress"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_override_changes_the_trained_teacher() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &["train-teacher", "--seed", "11", "--out-dir", "a"]);
    run_ok(dir.path(), &["train-teacher", "--seed", "12", "--out-dir", "b"]);
    let a = std::fs::read(dir.path().join("a/teacher.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/teacher.json")).unwrap();
    assert_ne!(a, b);

    run_ok(dir.path(), &["train-teacher", "--seed", "11", "--out-dir", "c"]);
    let c = std::fs::read(dir.path().join("c/teacher.json")).unwrap();
    assert_eq!(a, c, "same seed, same teacher");
}
