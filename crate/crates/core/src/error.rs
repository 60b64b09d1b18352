use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The OT-form field divides by `1 - t`; callers must stay below the guard.
    #[error("field evaluated at singular time t = {t}")]
    Singularity { t: f64 },

    #[error("integration failed at step {step}: {source}")]
    Integration {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("safety QP is infeasible: {0}")]
    Infeasible(String),

    #[error("{phase} phase: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("schema version mismatch in {path}: expected {expected}, found {found}")]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn at_step(step: usize, source: Error) -> Self {
        Error::Integration {
            step,
            source: Box::new(source),
        }
    }

    pub(crate) fn in_phase(phase: &'static str, source: Error) -> Self {
        Error::Phase {
            phase,
            source: Box::new(source),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
