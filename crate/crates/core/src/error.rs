use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    Format { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: {reason}")]
    Truncated { path: PathBuf, reason: String },

    #[error("class {class}: requested {requested} samples but only {available} available")]
    Capacity { class: u8, requested: usize, available: usize },

    #[error("{images} images but {labels} labels")]
    Consistency { images: usize, labels: usize },

    #[error("kernel produced non-finite value {value} for pair ({i}, {j})")]
    NonFiniteKernel { i: usize, j: usize, value: f64 },

    #[error("node {node} has non-positive degree {degree}")]
    Degenerate { node: usize, degree: f64 },

    #[error("singular propagation system (pivot ratio {condition:e})")]
    Singular { condition: f64 },

    #[error("fixed point did not converge after {iterations} iterations (last change {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("class balance undefined: {0}")]
    UndefinedBalance(String),

    #[error("ill-conditioned estimate: {0}")]
    IllConditioned(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
