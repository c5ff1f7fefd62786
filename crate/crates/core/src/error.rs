use thiserror::Error;

/// Unified error type for the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation point {x} outside [0, 1]")]
    OutOfDomain { x: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid knot vector: {reason}")]
    InvalidKnots { reason: String },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("geometry validation failed: {reason}")]
    GeometryValidation { reason: String },

    #[error("non-conforming interface between patches {patch_a} and {patch_b}: {reason}")]
    Conformity {
        patch_a: usize,
        patch_b: usize,
        reason: String,
    },

    #[error("assembly failed: {reason}")]
    Assembly { reason: String },

    #[error("matrix not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("PCG did not converge: {iterations} iterations, relative residual {residual:.3e}")]
    PcgNoConvergence { iterations: usize, residual: f64 },

    #[error("initialization solve for derivative order {order} failed")]
    Initialization {
        order: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("time step failed in block {block}")]
    StepFailure {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("instability detected at t = {t}: state norm grew {ratio:.3e}x over initial")]
    Instability { t: f64, ratio: f64 },

    #[error("invalid study configuration: {reason}")]
    Config { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
