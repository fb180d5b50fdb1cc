use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("total conflict between mass functions (1 - kappa = {remaining:e})")]
    TotalConflict { remaining: f64 },

    #[error("invalid mass function: {0}")]
    InvalidMass(String),

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("frame mismatch: expected {expected} classes, found {found}")]
    FrameMismatch { expected: usize, found: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

/// Coarse failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Toml(_) => ErrorClass::Config,
            Error::TotalConflict { .. }
            | Error::NonFinite(_)
            | Error::Numerical(_)
            | Error::Diverged { .. } => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
