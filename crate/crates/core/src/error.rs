use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parameter {mu:?} outside the admissible box")]
    Domain { mu: Vec<f64> },
    #[error("singular matrix or pencil: {0}")]
    Singular(String),
    #[error("matrix is not definite: {0}")]
    Definiteness(String),
    #[error("iteration did not converge: {0}")]
    NotConverged(String),
    #[error("unsupported system: {0}")]
    Unsupported(String),
    #[error("numerical accuracy problem: {0}")]
    Accuracy(String),
    #[error("fast path unavailable: {0}")]
    FallbackRequired(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{phase}: {source}")]
    Phase { phase: String, source: Box<Error> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps the error with the name of the pipeline phase that raised it.
    pub fn in_phase(self, phase: &str) -> Error {
        Error::Phase { phase: phase.to_string(), source: Box::new(self) }
    }
}
