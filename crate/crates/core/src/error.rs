use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite numeric input: {0}")]
    Numerical(String),

    #[error("malformed graph: {0}")]
    Structural(String),

    #[error("usage error: {0}")]
    Usage(String),

    /// A remote call failed after exhausting its retry budget.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    /// The endpoint answered with a status that retrying will not fix.
    #[error("remote rejected request with status {status}: {message}")]
    Remote { status: u16, message: String },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch} step {step} (samples {sample_ids:?}, parameter norm {param_norm})")]
    Diverged {
        epoch: usize,
        step: usize,
        sample_ids: Vec<String>,
        param_norm: f64,
    },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether retrying the same request could succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
