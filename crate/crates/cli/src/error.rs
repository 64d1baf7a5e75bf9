use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Compute(#[from] lsbe::Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// 2 for usage and input problems, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) => 1,
            _ => 2,
        }
    }
}
