use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("kernel {kernel} exceeds padded input {padded} in {axis}")]
    KernelTooLarge {
        kernel: usize,
        padded: usize,
        axis: &'static str,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward called without a recorded forward pass")]
    EmptyTape,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("domain {0} is empty")]
    EmptyDomain(usize),
    #[error("unknown domain {0}")]
    UnknownDomain(usize),
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl ToString) -> Self {
        Error::Format {
            what,
            reason: reason.to_string(),
        }
    }
}
