use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the inpainting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid duration: {0}")]
    InvalidDuration(String),

    #[error("infeasible gap placement: {0}")]
    InfeasiblePlacement(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::InvalidDuration(_) => "invalid_duration",
            Error::InfeasiblePlacement(_) => "infeasible_placement",
            Error::NumericalDegeneracy(_) => "numerical_degeneracy",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::State(_) => "state",
            Error::NonFinite { .. } => "non_finite",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
