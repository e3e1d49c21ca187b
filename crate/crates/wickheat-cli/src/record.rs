//! CSV tables, pass/fail checks and the JSON experiment record of one command run.

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;
use wickheat::Seed;

/// 17 significant digits, enough to round-trip an f64.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn flag(b: bool) -> String {
    b.to_string()
}

/// Spatial point as space-separated coordinates.
pub fn point(x: &[f64]) -> String {
    x.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" ")
}

pub const OUT_OF_DOMAIN: &str = "out-of-domain";

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&'static str]) -> Self {
        Table { name: name.to_string(), header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width in {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRecord {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub root_seed: u64,
    pub budget_scale: f64,
    pub threads: Option<usize>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
    /// Label → derived seed; label is `<command>/<estimator>` and the estimator
    /// indexes its replicates below that seed.
    pub seed_ledger: BTreeMap<String, u64>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub passed: bool,
}

impl ExperimentRecord {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Run options that do not belong to the config document.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub budget_scale: f64,
    pub threads: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { budget_scale: 1.0, threads: None }
    }
}

/// State of one command invocation.
pub struct Run {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub options: RunOptions,
    started: Instant,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<PathBuf>,
    checks: Vec<Check>,
    notes: Vec<String>,
}

impl Run {
    pub fn new(command: &'static str, config: ExperimentConfig, options: RunOptions) -> CliResult<Self> {
        std::fs::create_dir_all(&config.output_dir)?;
        Ok(Run {
            command,
            config,
            options,
            started: Instant::now(),
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
        })
    }

    /// Seed(root).child(command).child(label), recorded in the ledger.
    pub fn seed(&mut self, label: &str) -> Seed {
        let s = Seed(self.config.seed).child(self.command).child(label);
        self.seeds.insert(format!("{}/{label}", self.command), s.0);
        s
    }

    /// A budget multiplied by the run's budget scale, at least 2.
    pub fn scaled(&self, n: usize) -> usize {
        ((n as f64 * self.options.budget_scale).round() as usize).max(2)
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), pass, detail: detail.into() });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn emit(&mut self, table: &Table) -> CliResult<()> {
        let path = table.write(&self.config.output_dir)?;
        self.outputs.push(path);
        Ok(())
    }

    /// Writes `<command>_record.json` next to the tables.
    pub fn finish(self) -> CliResult<ExperimentRecord> {
        let passed = self.checks.iter().all(|c| c.pass);
        let record = ExperimentRecord {
            command: self.command.to_string(),
            config_hash: self.config.hash()?,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            root_seed: self.config.seed,
            budget_scale: self.options.budget_scale,
            threads: self.options.threads,
            outputs: self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            seed_ledger: self.seeds,
            checks: self.checks,
            notes: self.notes,
            passed,
        };
        let path = self.config.output_dir.join(format!("{}_record.json", self.command));
        let json = serde_json::to_string_pretty(&record).map_err(|e| crate::error::CliError::Io(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(record)
    }
}
