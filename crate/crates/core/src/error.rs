//! Error types shared across the solver, simulator and analysis modules.

use thiserror::Error;

/// Errors produced by the covariance-steering library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A time query fell outside the problem horizon.
    #[error("time {t} outside horizon [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    /// The reachability gramian failed the nonsingularity test.
    #[error("system not controllable: {0}")]
    NotControllable(String),

    /// A factorization or integration produced results that cannot be trusted.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A Riccati schedule blew up inside the horizon.
    #[error("finite escape detected after t = {time} (last valid node {node})")]
    EscapeDetected { node: usize, time: f64 },

    /// The boundary fixed-point iteration hit a singular intermediate inverse.
    #[error("iteration breakdown at iterate {iteration}: {reason}")]
    IterationBreakdown { iteration: usize, reason: String },

    /// A candidate two-point coupling leaves no admissible conditional covariance.
    #[error("infeasible coupling: {0}")]
    InfeasibleCoupling(String),
}

pub type Result<T> = std::result::Result<T, Error>;
