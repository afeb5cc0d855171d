use thiserror::Error;

/// Errors raised by the fusion library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPd(String),

    #[error("internal consistency check failed: {0}")]
    InternalInconsistency(String),

    #[error("Assumption (A1) violated: {0}")]
    RankCondition(String),

    #[error("joint covariance is singular")]
    SingularJoint,

    #[error("observation matrix lacks full column rank: {0}")]
    RankDeficient(String),

    #[error("point is not strictly inside both prior ellipsoids (values {q1:.6}, {q2:.6})")]
    NotInterior { q1: f64, q2: f64 },

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("value {value} outside of [0, 1]")]
    OutOfRange { value: f64 },

    #[error("alpha = {alpha} is not an admissible family parameter: {reason}")]
    InvalidFamilyParameter { alpha: f64, reason: String },

    #[error("combined information matrix is singular at alpha = {alpha}")]
    SingularSigma { alpha: f64 },

    #[error("degenerate weight factor: {0}")]
    DegenerateQ(String),

    #[error("no fusion order reaches full state rank: {0}")]
    Unreachable(String),

    #[error("schedule event {index}: {reason}")]
    Schedule { index: usize, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
