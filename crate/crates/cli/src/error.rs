//! CLI error taxonomy mapped to exit codes.
//!
//! 0 success, 1 usage error, 2 input validation error, 3 numeric error
//! (saturation or divergence), so scripted harnesses can branch on the
//! failure class.

use ratio_forge_core::{DiagnosticsError, FilterError, ObjectiveError, SimError, TraceError};

use crate::config::ConfigError;
use crate::record::TraceIoError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<TraceIoError> for CliError {
    fn from(e: TraceIoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Saturated { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Diverged { .. } | SimError::Filter(FilterError::Saturated { .. }) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}
