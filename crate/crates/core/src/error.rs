use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("warp is degenerate: dehomogenizing coordinate {0:e}")]
    DegenerateWarp(f64),
    #[error("surface is back-facing in the {0} view")]
    BackFacing(&'static str),
    #[error("pixel ({u:.3}, {v:.3}) is out of bounds with margin {margin}")]
    OutOfBounds { u: f64, v: f64, margin: f64 },
    #[error("only {valid} of {total} window pixels carry valid depth")]
    InsufficientDepth { valid: usize, total: usize },
    #[error("plane fit is degenerate")]
    DegenerateFit,
    #[error("covariance is singular or not positive definite")]
    SingularCovariance,
    #[error("damped normal equations are singular at lambda {0:e}")]
    SingularNormalEquations(f64),
    #[error("too many degenerate Monte Carlo draws: {excluded} of {total}")]
    DegenerateDraws { excluded: usize, total: usize },
    #[error("too few poses for trajectory alignment: {0}")]
    TooFewPoses(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
