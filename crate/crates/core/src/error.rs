use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (shape, range, label).
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// A stage was asked to run before its inputs exist (empty queue, untrained model).
    #[error("not ready: {0}")]
    NotReady(String),

    /// A forward or backward pass produced a NaN or infinity.
    #[error("numerical failure in layer {layer} ({stage})")]
    NumericalFailure { layer: usize, stage: &'static str },

    /// Training produced a non-finite loss.
    #[error("divergence in {phase} at step {step}: {detail}")]
    Divergence { phase: String, step: usize, detail: String },

    /// A metric is undefined for the given input (e.g. only one class present).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A file did not match its documented layout.
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    /// Configuration could not be parsed or referenced unknown keys.
    #[error("config error: {message} (keys: {})", keys.join(", "))]
    Config { message: String, keys: Vec<String> },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
