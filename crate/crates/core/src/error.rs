//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors are grouped so the command-line front end can map each one onto
/// its exit-code class (input, backend, invariant).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    InvalidInput(String),

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("statistics: {0}")]
    Stats(String),

    #[error("untestable contingency table: {0}")]
    Untestable(String),

    #[error("backend `{endpoint}` unreachable: {message}")]
    Transport { endpoint: String, message: String },

    #[error("backend protocol violation: {0}")]
    Protocol(String),

    #[error("prediction missing for {kind} request {key}")]
    PredictionMissing { kind: String, key: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    /// Attach a file path to an error raised while reading that file.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::File { .. } | Error::Invariant(_) => self,
            other if other.is_backend() => other,
            other => Error::File {
                path: path.into(),
                message: other.to_string(),
            },
        }
    }

    /// True for failures that originate in a scoring backend.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Transport { .. } | Error::Protocol(_) | Error::PredictionMissing { .. }
        )
    }

    /// Exit code for the command-line contract: 1 input, 2 backend, 3 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Transport { .. } | Error::Protocol(_) | Error::PredictionMissing { .. } => 2,
            Error::Invariant(_) => 3,
            _ => 1,
        }
    }
}
