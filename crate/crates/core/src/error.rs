use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data, malformed files, out-of-domain parameters.
    Data,
    /// Non-positive-definite matrices, failed fits and similar.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("matrix not positive definite at {context}")]
    NotPositiveDefinite { context: String },
    #[error("problem too large for dense evaluation: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),
    #[error("dense check failed: fast {fast} vs dense {dense} (relative difference {rel:e})")]
    DenseCheck { fast: f64, dense: f64, rel: f64 },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. }
            | Error::Header(_)
            | Error::PayloadLength { .. }
            | Error::NonFinite(_)
            | Error::Dimension(_)
            | Error::Domain(_)
            | Error::Parse { .. }
            | Error::TooLarge { .. }
            | Error::RankDeficient(_)
            | Error::Degenerate(_) => ErrorClass::Data,
            Error::NotPositiveDefinite { .. } | Error::NoConvergence(_) | Error::DenseCheck { .. } => {
                ErrorClass::Numerical
            }
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
