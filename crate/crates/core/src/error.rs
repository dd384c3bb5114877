use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SosmError>;

#[derive(Debug, Error)]
pub enum SosmError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("optimizer diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("optimizer failed to converge: {0}")]
    Convergence(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("flow step too large on edge ({i}, {j}): eta * |kappa| = {product} >= 1")]
    StepSize { i: usize, j: usize, product: f64 },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SosmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SosmError::Io { path: path.into(), source }
    }
}
