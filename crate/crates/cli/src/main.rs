//! `bitnet-mf <verify|train|sweep-eps|sweep-width|gradcheck> --config <path> [--out <dir>] [--workers N]`
//!
//! Exit codes: 0 success, 1 assertion failure, 2 config error, 3 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use bitnet_mf::experiment::{load_config, run_experiment, ExitStatus, ExperimentKind, RunOptions};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Verify,
    Train,
    SweepEps,
    SweepWidth,
    Gradcheck,
}

impl From<Command> for ExperimentKind {
    fn from(c: Command) -> Self {
        match c {
            Command::Verify => ExperimentKind::Verify,
            Command::Train => ExperimentKind::Train,
            Command::SweepEps => ExperimentKind::SweepEps,
            Command::SweepWidth => ExperimentKind::SweepWidth,
            Command::Gradcheck => ExperimentKind::Gradcheck,
        }
    }
}

/// Smoothed quantized networks: verification suites, training runs and
/// convergence sweeps.
#[derive(Debug, Parser)]
#[command(name = "bitnet-mf", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(ExitStatus::ConfigError.code() as u8);
        }
    };
    let opts = RunOptions {
        kind: Some(cli.command.into()),
        out_dir: cli.out,
        workers: cli.workers.map(|n| n as usize),
    };
    match run_experiment(&cfg, &opts) {
        Ok(summary) => {
            for s in &summary.suites {
                let verdict = if s.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {}: {}", s.name, s.detail);
            }
            for f in &summary.failures {
                eprintln!("failed: {f}");
            }
            println!(
                "run {} finished with exit code {}; artifacts in {}",
                summary.run_id,
                summary.status.code(),
                summary.out_dir.display()
            );
            ExitCode::from(summary.status.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ExitStatus::from_error(&e).code() as u8)
        }
    }
}
