//! Shared error type for the whole crate.

use thiserror::Error;

/// Errors surfaced by any stage of the pipeline.
///
/// The CLI maps error categories to distinct exit codes; see
/// [`crate::io::exit_code`].
#[derive(Debug, Error)]
pub enum ApqrError {
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("stage {stage} failed to converge: gradient inf-norm {grad_norm:.3e} after {iterations} iterations")]
    Convergence {
        stage: usize,
        grad_norm: f64,
        iterations: usize,
        /// Objective values recorded up to the failure, for post-mortem.
        trace: Vec<f64>,
    },

    #[error("objective decreased by {drop:.3e} at stage {stage}, pass {pass}; block update is not monotone")]
    MonotonicityViolation { stage: usize, pass: usize, drop: f64 },

    #[error("grid column {column} has zero variance and cannot be standardized")]
    DegenerateColumn { column: usize },

    #[error("basis extraction exhausted after {extracted} component(s): residual covariance is zero")]
    BasisExhausted { extracted: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing source curves: {0}")]
    MissingSource(String),

    #[error("unsupported model schema '{found}', expected '{expected}'")]
    SchemaVersion { found: String, expected: &'static str },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ApqrError>;
