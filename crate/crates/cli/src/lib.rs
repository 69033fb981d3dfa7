//! Experiment harness: dataset generation, training runs with replayable
//! manifests, evaluation, correlation analysis, weight-map export, and the
//! ablation grid.

pub mod commands;
pub mod config;
pub mod exit;
pub mod run;

pub use commands::{run, Cli, Command, OUT_ROOT_ENV};
pub use config::{load_config, RunConfig};
pub use exit::{exit_code, CliError};
