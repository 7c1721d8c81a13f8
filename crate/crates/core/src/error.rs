use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A response vector with zero sample variance; the correlation with it
    /// is undefined.
    #[error("degenerate profile: response has zero variance")]
    DegenerateProfile,

    #[error("insufficient historical profiles: need at least {needed}, got {found}")]
    InsufficientProfiles { needed: usize, found: usize },

    #[error("noise variance estimate is zero; historical profiles are identical")]
    DegenerateNoise,

    #[error("no closed-form moments for {0}; use Monte Carlo")]
    NoClosedForm(&'static str),

    #[error("calibration target infeasible: {0}")]
    Infeasible(String),

    #[error("orthogonalization degenerate: residual variance {0:e} below threshold")]
    Parallel(f64),

    #[error("power iteration hit a null direction {0} times")]
    NullDirection(usize),

    #[error("undefined: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, Error>;
