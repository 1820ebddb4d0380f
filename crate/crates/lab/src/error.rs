use std::path::PathBuf;

use cdp_core::LabError;
use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },

    #[error("{path}: schema error at `{key}`: {message}")]
    Schema { path: String, key: String, message: String },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    /// Every problem reported, one entry per violation.
    pub fn violations(&self) -> Vec<String> {
        match self {
            Self::Invalid(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{context}: {source}")]
    Numerical { context: &'static str, source: LabError },

    #[error("{context}: {source}")]
    Rejected { context: &'static str, source: LabError },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Checkpoint { path: PathBuf, source: CheckpointError },
}

impl RunError {
    /// Wraps a library error, separating numerical failures from inputs the
    /// library refused.
    pub fn lab(context: &'static str, source: LabError) -> Self {
        match source {
            LabError::TrainingDiverged { .. }
            | LabError::GuidanceDiverged { .. }
            | LabError::NonFiniteSample { .. }
            | LabError::Domain(_)
            | LabError::DegenerateClassifier
            | LabError::NoRobustDirection { .. } => Self::Numerical { context, source },
            _ => Self::Rejected { context, source },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// 2 for configuration problems, 3 for numerical failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Rejected { .. } => 2,
            Self::Numerical { .. } => 3,
            Self::Io { .. } | Self::Data { .. } | Self::Checkpoint { .. } => 1,
        }
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;
