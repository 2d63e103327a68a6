//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias for results carrying [`Error`].
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Non-finite input or mismatched shapes.
    #[error("domain error: {0}")]
    Domain(String),

    /// A cost specification violates its invariants.
    #[error("invalid cost specification: {0}")]
    InvalidSpec(String),

    /// A network model violates its invariants.
    #[error("invalid network model: {0}")]
    InvalidModel(String),

    /// The expected weight matrix has no spectral gap.
    #[error("network is not connected in mean (rho = {rho})")]
    InfeasibleNetwork {
        /// Spectral radius of the expected weight matrix minus the averaging matrix.
        rho: f64,
    },

    /// Exact enumeration requested for too many edges.
    #[error(
        "exact enumeration supports at most {max} edges, model has {edges}; use monte-carlo mode"
    )]
    Capacity {
        /// Number of edges in the model.
        edges: usize,
        /// Largest supported edge count.
        max: usize,
    },

    /// A stepsize plan fails the convergence conditions.
    #[error("infeasible stepsize plan: {0}")]
    InfeasiblePlan(String),

    /// Iterates became non-finite or exceeded the blow-up threshold.
    #[error("divergence in replica {replica} at iteration {k}")]
    Divergence {
        /// Replica index.
        replica: usize,
        /// Iteration at which divergence was detected.
        k: usize,
    },

    /// Configuration could not be parsed or resolved.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem or serialization failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
