use std::path::Path;

use informed_iva::Error as CoreError;
use thiserror::Error;

/// Failures of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("solver error: {0}")]
    Singular(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Singular(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::SingularUpdate { .. }
            | CoreError::SingularBackground { .. }
            | CoreError::SingularDemixing { .. } => CliError::Singular(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
