mod density;
mod malliavin;
mod moments;
mod tails;
pub mod validate;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::record::{num, point, ExperimentRecord, Run, RunOptions, Table};
use clap::ValueEnum;
use wickheat::feynman_kac::{generate_ensemble, Ensemble, FkContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Moments,
    Tails,
    Density,
    Malliavin,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Moments => "moments",
            Command::Tails => "tails",
            Command::Density => "density",
            Command::Malliavin => "malliavin",
            Command::Validate => "validate",
        }
    }
}

/// Runs one command and writes its tables and record into the config's output directory.
pub fn run_command(command: Command, config: ExperimentConfig, options: RunOptions) -> CliResult<ExperimentRecord> {
    config.validate()?;
    if !(options.budget_scale > 0.0) {
        return Err(CliError::Config("budget scale must be positive".into()));
    }
    let body = move || -> CliResult<ExperimentRecord> {
        let mut run = Run::new(command.name(), config, options)?;
        match command {
            Command::Moments => moments::run(&mut run)?,
            Command::Tails => tails::run(&mut run)?,
            Command::Density => density::run(&mut run)?,
            Command::Malliavin => malliavin::run(&mut run)?,
            Command::Validate => validate::run(&mut run)?,
        }
        run.finish()
    };
    match options.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(e.to_string()))?;
            pool.install(body)
        }
        None => body(),
    }
}

/// Grid point label used in seed labels and check names.
fn point_label(ti: usize, xi: usize) -> String {
    format!("t{ti}/x{xi}")
}

fn ensemble_table(name: &str) -> Table {
    Table::new(name, &["t", "x", "index", "value", "inner_se", "field_seed"])
}

/// Outer ensemble at one grid point; rows appended to `table`.
fn ensemble_at(run: &mut Run, ctx: &FkContext, t: f64, x: &[f64], label: &str, table: &mut Table) -> CliResult<Ensemble> {
    let seed = run.seed(&format!("ensemble/{label}"));
    let n_fields = run.scaled(run.config.budget.n_fields);
    let n_paths = run.scaled(run.config.budget.n_paths);
    let ens = generate_ensemble(ctx, t, x, n_fields, n_paths, seed)?;
    for (i, s) in ens.samples.iter().enumerate() {
        let fs = s.field_seed.map(|v| v.to_string()).unwrap_or_default();
        table.push(vec![num(t), point(x), i.to_string(), num(s.value), num(s.se), fs]);
    }
    Ok(ens)
}

/// `n` points from `hi` down by `decades` decades on a log scale.
fn log_grid_below(hi: f64, n: usize, decades: f64) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n).map(|j| hi * 10f64.powf(-decades * j as f64 / (n - 1) as f64)).collect()
}
