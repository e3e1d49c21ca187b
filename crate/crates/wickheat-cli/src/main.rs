use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use wickheat_cli::{run_command, Command, ExperimentConfig, RunOptions};

/// Monte Carlo experiments for the heat equation with Wick-multiplicative Gaussian noise.
#[derive(Debug, Parser)]
#[command(name = "wickheat", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// TOML experiment config; the white-noise default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the root seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Multiplies every Monte Carlo budget.
    #[arg(long, default_value_t = 1.0)]
    budget_scale: f64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match &args.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::white_default(),
    };
    let mut config = config;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(o) = args.out {
        config.output_dir = o;
    }
    let options = RunOptions { budget_scale: args.budget_scale, threads: args.threads };
    match run_command(args.command, config, options) {
        Ok(record) => {
            for c in record.failures() {
                eprintln!("FAIL {}: {}", c.name, c.detail);
            }
            eprintln!(
                "{}: {} checks, {} failed, {:.1} s",
                record.command,
                record.checks.len(),
                record.failures().len(),
                record.wall_clock_seconds
            );
            if record.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
