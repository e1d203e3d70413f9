//! Crate-wide error type.
//!
//! Errors are grouped into coarse kinds so the CLI can map them onto
//! distinct exit codes (config, data, numeric).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer shape disagreement.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid configuration value or flag combination.
    #[error("invalid config: {0}")]
    Config(String),

    /// An API contract was violated (e.g. non-scalar loss passed to backward).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Operation attempted on uninitialized or inconsistent state.
    #[error("state error: {0}")]
    State(String),

    /// A forward or backward kernel produced NaN/Inf.
    #[error("non-finite values produced by `{op}` during {phase}")]
    NonFinite { op: &'static str, phase: &'static str },

    /// Dataset/manifest/image problems.
    #[error("data error: {0}")]
    Data(String),

    /// Metric is undefined for the given inputs (e.g. single-class ROC-AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A verification harness (gradient or self-check) reported failures.
    #[error("verification failed: {0}")]
    Verification(String),

    /// Model or attention file container violations (magic, version, checksum).
    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Other,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Data(_) | Error::Io(_) | Error::Format(_) => ErrorKind::Data,
            Error::NonFinite { .. } | Error::UndefinedMetric(_) | Error::Verification(_) => {
                ErrorKind::Numeric
            }
            _ => ErrorKind::Other,
        }
    }

    /// Process exit code for this error: 2 config, 3 data, 4 numeric, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
            ErrorKind::Other => 1,
        }
    }
}
