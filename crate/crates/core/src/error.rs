use thiserror::Error;

/// Errors raised by the model, certificate, simulation and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model failed structural checks: {0}")]
    StructureViolation(String),

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("bracket filtration exceeded cap of {cap} fields at level {level}")]
    FiltrationBlowUp { level: usize, cap: usize },

    #[error("bracket span has rank {rank} < {dim} at node {node:?} (level {level})")]
    SpanningFailure {
        level: usize,
        rank: usize,
        dim: usize,
        node: Vec<f64>,
    },

    #[error("{exploded} of {total} trajectories exploded; reduce dt")]
    Explosion { exploded: usize, total: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("iteration did not converge after {iterations} steps (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("iteration stagnated; residual history {history:?}")]
    Stagnation { history: Vec<f64> },

    #[error("eigensolver did not converge; Ritz residuals {residuals:?}")]
    EigenNoConvergence { residuals: Vec<f64> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
