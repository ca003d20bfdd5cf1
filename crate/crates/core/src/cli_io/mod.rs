//! Configuration files, experiment orchestration, reports and CSV output.

pub mod config;
pub mod report;
pub mod run;
pub mod simulate;
pub mod validate;

use std::fmt;

use thiserror::Error;

use crate::estimators::EstimatorError;

pub use config::{ExperimentConfig, OutputFormat, Resolved};
pub use report::{config_hash, ControlStats, RunReport, Timing};
pub use run::{control_statistics, run_config, run_experiment, write_outputs};
pub use simulate::{simulate, SimulatedPath};
pub use validate::{validate_suite, CheckResult, ValidateReport};

/// A rejected configuration field, addressed by its dotted path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl ValidationError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "invalid config: {}", self.message)
        } else {
            write!(f, "invalid config at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("validation suite failed: {0}")]
    Acceptance(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 2 validation, 3 numerical, 4 failed suite, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Acceptance(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl fmt::Display, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_string(), source }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Invalid(msg) | EstimatorError::Inapplicable(msg) => {
                CliError::Validation(ValidationError::new("estimator", msg))
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}
