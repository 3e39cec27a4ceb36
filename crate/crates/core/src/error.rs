use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories surfaced by the library.
///
/// The CLI maps each category onto its own exit code, see [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate point: cartesian_to_polar is undefined at the origin")]
    DegeneratePoint,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: dimension error: {reason}")]
    Dimension { path: PathBuf, reason: String },

    #[error("{path}: truncated payload: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("dataset load error: {0}")]
    Load(String),

    #[error("scene generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },

    #[error("checkpoint incompatible with configuration: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}; last good checkpoint: {last_good}")]
    NonFiniteLoss { step: usize, last_good: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Checkpoint(_) => ErrorCategory::Config,
            Error::Io { .. } => ErrorCategory::Io,
            Error::MalformedHeader { .. }
            | Error::Dimension { .. }
            | Error::Truncated { .. }
            | Error::Load(_)
            | Error::Generation { .. }
            | Error::Eval(_)
            | Error::Json(_) => ErrorCategory::Data,
            Error::DegeneratePoint | Error::NonFiniteLoss { .. } | Error::Tensor(_) => {
                ErrorCategory::Numeric
            }
        }
    }
}
