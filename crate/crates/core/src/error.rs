use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("transition probability P(y={y}|x={x}) vanishes inside the continuity window")]
    ContinuityViolation { x: usize, y: usize },
    #[error("information density is -inf on used cell (x={x}, y={y})")]
    InfiniteDensity { x: usize, y: usize },
    #[error("support of the sum distribution grew to {size} points (cap {cap})")]
    SupportExplosion { size: usize, cap: usize },
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("optimizer is not unique: {0}")]
    NonUniqueOptimizer(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
