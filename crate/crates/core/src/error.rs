use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or unsupported geometry.
    #[error("geometry: {0}")]
    Geometry(String),
    /// A query point or index violates the operation's precondition.
    #[error("domain: {0}")]
    Domain(String),
    /// A parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Config(String),
    #[error("resource guard: {0}")]
    ResourceGuard(String),
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    /// A numerical consistency check failed.
    #[error("numerics: {0}")]
    Numerics(String),
    /// Too many walks hit the step cap.
    #[error("timeout budget exceeded: {0}")]
    TimeoutBudget(String),
    #[error("internal: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
