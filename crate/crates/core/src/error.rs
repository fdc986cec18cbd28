use thiserror::Error;

/// Errors raised by problem construction, geometry, the integrator and the oracle.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("budget {gamma} out of range 0..={n}")]
    BudgetOutOfRange { gamma: usize, n: usize },

    #[error("subset enumeration over {n} agents exceeds the limit of {limit}")]
    EnumerationTooLarge { n: usize, limit: usize },

    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in block {block} at t = {time}")]
    Divergence { block: &'static str, time: f64 },

    #[error("oracle did not converge after {iterations} iterations (worst KKT residual {worst_residual:e})")]
    NonConvergence {
        iterations: usize,
        worst_residual: f64,
    },

    #[error("unsupported problem for this operation: {0}")]
    Unsupported(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
