use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown method `{name}`; valid names: {}", valid.join(", "))]
    UnknownMethod { name: String, valid: Vec<String> },

    #[error("unknown problem `{name}`; valid names: {}", valid.join(", "))]
    UnknownProblem { name: String, valid: Vec<String> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid method: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("capacity exceeded: {what} (limit {limit})")]
    Capacity { what: String, limit: usize },

    #[error("invalid random variable family: {0}")]
    InvalidFamily(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("calculus mismatch: method is {method:?}, problem is {problem:?}")]
    CalculusMismatch {
        method: crate::tableau::Calculus,
        problem: crate::tableau::Calculus,
    },

    #[error("fixed-point iteration for stage {stage} did not converge after {iterations} iterations (residual {residual:e})")]
    Divergence {
        stage: String,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite state: {0}")]
    NonFinite(String),

    #[error("malformed forest: {0}")]
    Structure(String),

    #[error("decorations are not comparable: {0}")]
    Poset(String),

    #[error("batch {batch}, path {path}: {source}")]
    Path {
        batch: usize,
        path: usize,
        source: Box<Error>,
    },

    #[error("step {step}: {source}")]
    Step { step: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
