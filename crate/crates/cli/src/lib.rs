//! Experiment runner for `bilevel-core`: configuration, per-cell CSV traces,
//! slope sweeps, hard-instance certification and diagnostics.

pub mod commands;
pub mod config;
pub mod error;
pub mod trace_csv;

pub use config::{Algo, ExperimentConfig, RunArgs};
pub use error::{exit, CliError, CliResult};
