//! Crate-wide error type.
//!
//! One enum instead of per-module errors so `Result` signatures stay uniform
//! across the pipeline, and so the CLI can map every failure onto its exit
//! code contract via [`Error::class`].

use thiserror::Error;

/// Coarse failure class; the CLI turns this into a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration or arguments (exit 2).
    Config,
    /// Missing, malformed or insufficient data (exit 3).
    Data,
    /// Train/test contamination (exit 4).
    Leakage,
    /// Numeric failure: non-finite values, failed convergence checks (exit 5).
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Leakage => 4,
            ErrorClass::Numeric => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("leakage: {0}")]
    Leakage(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("unsupported sampling rate: {0}")]
    UnsupportedRate(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidDimension(_)
            | Error::ShapeMismatch(_)
            | Error::Domain(_)
            | Error::Config(_)
            | Error::State(_)
            | Error::UnsupportedRate(_) => ErrorClass::Config,
            Error::Data(_) | Error::Format(_) | Error::Io { .. } => ErrorClass::Data,
            Error::Leakage(_) => ErrorClass::Leakage,
            Error::NonFinite(_) | Error::Numeric(_) => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
