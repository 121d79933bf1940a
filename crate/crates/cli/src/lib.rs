//! Command implementations behind the `gridtopo` binary.
//!
//! Every command returns its output document; `main` decides whether it
//! goes to a file or stdout.

use std::path::{Path, PathBuf};

use gridtopo::ci_test::CiError;
use gridtopo::graphical_model::GraphModelError;
use gridtopo::grid::{GridError, GridGraph};
use gridtopo::learner::LearnError;
use gridtopo::power_flow::PowerFlowError;
use gridtopo::sampling::{MeasurementMatrix, SamplingError};
use thiserror::Error;

mod commands;
pub mod config;
mod sweep;

pub use commands::{
    cmd_gmcheck, cmd_learn, cmd_simulate, cmd_spur, run_learn, GmReport, LearnReport, LearnSettings, Method,
};
pub use config::ExperimentConfig;
pub use sweep::{run_sweep, Aggregate, SweepFailure, SweepResult, SweepRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Model(#[from] GraphModelError),
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

impl CliError {
    /// Short machine-readable tag printed as `error[tag]: ...`.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Grid(_) => "grid",
            CliError::Sampling(_) => "sampling",
            CliError::PowerFlow(_) => "power-flow",
            CliError::Model(_) => "model",
            CliError::Ci(_) | CliError::Learn(LearnError::Ci(_)) => "ci-test",
            CliError::Learn(LearnError::Depth { .. }) => "depth",
            CliError::Learn(LearnError::Structural { .. }) => "structural",
            CliError::Learn(_) => "learn",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 3,
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

pub fn load_grid(path: &Path) -> Result<GridGraph, CliError> {
    Ok(read_file(path)?.parse()?)
}

pub fn load_measurements(path: &Path) -> Result<MeasurementMatrix, CliError> {
    Ok(MeasurementMatrix::from_csv(&read_file(path)?)?)
}
