use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("target failure probability 2^{target_log2:.3} unreachable (best bound 2^{best_log2:.3})")]
    UnreachableTarget { target_log2: f64, best_log2: f64 },

    #[error("calibration invalid: {0}")]
    Calibration(String),

    #[error("no X-basis detections, the error rate cannot be estimated")]
    EmptyXBasis,

    #[error("protocol abort: certified length {r_final:.3} bits is not positive")]
    Abort { r_final: f64 },

    #[error("length mismatch: expected {expected} bits, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid Toeplitz shape: {0}")]
    Shape(String),

    #[error("{test}: needs at least {needed} bits, got {actual}")]
    InsufficientBits {
        test: &'static str,
        needed: usize,
        actual: usize,
    },

    #[error("rate function is not unimodal on [{lo}, {hi}]")]
    NotUnimodal { lo: f64, hi: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
