use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blockdrop::cli;

/// Few-shot residual-block compression: train, probe, compress, verify.
#[derive(Parser)]
#[command(name = "blockdrop", version, about)]
struct Args {
    /// Experiment config JSON; defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config field, e.g. `--set compress.k=5`. Repeatable;
    /// applied in order after the file is read.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Override the master seed; every derived stream moves with it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the dataset, train the teacher, write checkpoint and metrics.
    TrainTeacher,
    /// Interpolate between model pairs and write loss curves plus diagnostics.
    ProbeLandscape {
        /// Teacher checkpoint; defaults to `<out_dir>/teacher.json`.
        #[arg(long, value_name = "FILE")]
        teacher: Option<PathBuf>,
    },
    /// Run the configured compression pipeline and write the pruned model.
    Compress {
        #[arg(long, value_name = "FILE")]
        teacher: Option<PathBuf>,
    },
    /// Check the divergence and estimator-variance claims; nonzero exit on
    /// a hard failure.
    VerifyTheory,
    /// Measure per-block drop latencies and write the timing table.
    BenchLatency {
        #[arg(long, value_name = "FILE")]
        teacher: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let cfg = match cli::resolve_config(
        args.config.as_deref(),
        &args.sets,
        args.seed,
        args.out_dir.as_deref(),
    ) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match &args.cmd {
        Cmd::TrainTeacher => cli::cmd_train_teacher(&cfg),
        Cmd::ProbeLandscape { teacher } => cli::cmd_probe_landscape(&cfg, teacher.as_deref()),
        Cmd::Compress { teacher } => cli::cmd_compress(&cfg, teacher.as_deref()),
        Cmd::VerifyTheory => cli::cmd_verify_theory(&cfg),
        Cmd::BenchLatency { teacher } => cli::cmd_bench_latency(&cfg, teacher.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
