//! Experiment runner for the wickheat laboratory: config parsing, seed ledger,
//! the five commands and their CSV tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod record;

pub use commands::{run_command, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use record::{ExperimentRecord, RunOptions};
