use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A corpus record could not be decoded. Line numbers are 1-based.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("embedding file format: {0}")]
    Format(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at step {step}{}", .epoch.map(|e| format!(" (epoch {e})")).unwrap_or_default())]
    Divergence { step: u64, epoch: Option<usize> },

    #[error("checkpoint mismatch: {0}")]
    Version(String),

    #[error(
        "skew threshold {threshold} not reached after {epochs} epochs (best proxy accuracy {best:.4})"
    )]
    Unreachable {
        threshold: f64,
        best: f64,
        epochs: usize,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
