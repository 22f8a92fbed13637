use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: u64, reason: String },

    #[error("out-of-order timestamp {timestamp} (latest seen {latest}, tolerance {tolerance})")]
    OutOfOrder {
        timestamp: f64,
        latest: f64,
        tolerance: f64,
    },

    #[error("unknown class {name:?}; known classes: {known:?}")]
    UnknownClass { name: String, known: Vec<String> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("corrupt model file at byte offset {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },

    #[error("unsupported model format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite(_) => ErrorClass::Numeric,
            Error::Config(_) | Error::InvalidArgument(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
