//! Error type shared by every module in the crate.

use thiserror::Error;

/// Unified error for dataset handling, model assembly, training and
/// evaluation. Variants are grouped by how a front end should react to them
/// (see [`Error::kind`]).
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure (missing file, unreadable path, ...).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A dataset record or dataset-level invariant is violated. The message
    /// names the offending record (line number) where applicable.
    #[error("dataset error: {0}")]
    Data(String),

    /// Tensor or sequence dimensions do not match what a model/config expects.
    #[error("shape error: {0}")]
    Shape(String),

    /// A checkpoint file is malformed, truncated, or fails its integrity
    /// checks (payload hash, manifest/shape agreement).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A configuration value is out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A non-finite value surfaced where a finite one is required
    /// (diverged loss, infinite score, ...).
    #[error("numeric error: {0}")]
    Numeric(String),
}

/// Coarse classification used by front ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad usage or configuration supplied by the caller.
    Usage,
    /// Problem with input data or stored artifacts.
    Data,
    /// Numerical failure at runtime.
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Io(_) | Error::Data(_) | Error::Shape(_) | Error::Checkpoint(_) => {
                ErrorKind::Data
            }
            Error::Numeric(_) => ErrorKind::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
