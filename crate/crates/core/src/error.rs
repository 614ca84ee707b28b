use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("no bracket for the stationary current: {0}")]
    BracketNotFound(String),

    #[error("endpoint mismatch {mismatch:.3e} exceeds {tolerance:.1e}")]
    EndpointMismatch { mismatch: f64, tolerance: f64 },

    #[error("{method} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("potential lost strict monotonicity at node {node}{}", time.map(|t| format!(", t = {t:.4}")).unwrap_or_default())]
    MonotonicityLoss { time: Option<f64>, node: usize },

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("state space too large: N = {n} (limit {limit})")]
    DimensionTooLarge { n: usize, limit: usize },
}
