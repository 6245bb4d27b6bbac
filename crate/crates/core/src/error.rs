use thiserror::Error;

/// Errors raised by the geometry, map and dynamics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller broke an operation's precondition (mismatched base points,
    /// wrong dimension, invalid parameters).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Evaluation outside the domain of a chart, potential or map.
    #[error("domain error: {0}")]
    Domain(String),
    /// The point lies on the branch locus {some z_i = 0}.
    #[error("point lies on the branch locus (min |z_i| = {min_modulus:e})")]
    BranchLocus { min_modulus: f64 },
    #[error("not a contact map at this point (kernel residual {residual:e})")]
    NotContact { residual: f64 },
    #[error("path segment {segment} is not horizontal (contact residual {residual:e})")]
    NonHorizontal { segment: usize, residual: f64 },
    #[error("non-convergent: {0}")]
    NonConvergent(String),
    /// A construction was rejected; the message names the failing condition.
    #[error("rejected: {0}")]
    Rejected(String),
}

pub type Result<T> = std::result::Result<T, Error>;
