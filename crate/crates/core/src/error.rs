use thiserror::Error;

/// Errors raised by the path engine, the estimator encoders and the inference layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("quadratic program is infeasible at z = {z}")]
    Infeasible { z: f64 },
    #[error("quadratic program is unbounded below at z = {z}")]
    Unbounded { z: f64 },
    #[error("active-set solver did not converge within {iterations} iterations")]
    MaxIterations { iterations: usize },
    #[error("KKT block matrix is singular (pivot {pivot:.3e} below tolerance)")]
    SingularKkt { pivot: f64 },
    #[error("solution path stalled at z = {z}: {reason}")]
    PathStalled { z: f64, reason: &'static str },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid problem data: {0}")]
    InvalidProblem(String),
    #[error("penalty needs at least {min} columns, got {got}")]
    DimensionTooSmall { min: usize, got: usize },
    #[error("encoder expects a {expected} problem")]
    KindMismatch { expected: &'static str },
    #[error("penalty matrix must have full row rank")]
    RankDeficientPenalty,
    #[error("design restricted to the selected columns is rank deficient")]
    RankDeficient,
    #[error("test direction has an empty segment around component {0}")]
    EmptySegment(usize),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("component {0} is not in the active set")]
    NotSelected(usize),
    #[error("test statistic has non-positive variance")]
    DegenerateVariance,
    #[error("observed statistic z = {z_obs} lies outside the truncation region")]
    ObservedExcluded { z_obs: f64 },
    #[error("truncation region carries no probability mass")]
    VanishingMass,
    #[error("confidence bound bracket failed to cross the target level")]
    BracketFailure,
    #[error("selected tuning parameter never wins the validation comparison")]
    EmptyRegion,
    #[error("selection half produced no active components")]
    EmptySelection,
    #[error("stable set is empty")]
    EmptyStableSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
