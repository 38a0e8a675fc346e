use std::fmt;
use std::path::Path;

use dsl_core::DslError;

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Io = 1,
    Config = 2,
    Aborted = 3,
    Numerical = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::new(ExitKind::Io, format!("{}: {err}", path.display()))
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Config, message)
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DslError> for CliError {
    fn from(e: DslError) -> Self {
        let kind = match e {
            DslError::TrainingAborted { .. } => ExitKind::Aborted,
            DslError::InvalidInput(_) | DslError::ShapeMismatch { .. } => ExitKind::Config,
            _ => ExitKind::Numerical,
        };
        Self::new(kind, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
