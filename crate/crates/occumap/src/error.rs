//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the occupancy-mapping toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("emitter or sensor outside region: {0}")]
    Placement(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("aggregation mode error: {0}")]
    Mode(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (CLI exit code 2);
    /// everything else is a runtime failure (exit code 3).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Solver(_) | Error::State(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
