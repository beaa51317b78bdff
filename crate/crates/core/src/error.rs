use std::io;

use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are grouped so a driver can map them onto distinct exit codes:
/// configuration problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed input at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported schema version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite activations in layer {layer} ({site})")]
    NumericFailure { layer: usize, site: &'static str },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("not found: {0}")]
    NotFound(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Coarse class of the error, used by the command-line driver for exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::CheckpointMismatch(_) => ErrorKind::Config,
            Error::NonFinite(_) | Error::NumericFailure { .. } => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
