use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("supports overlap at vertex {0}")]
    OverlappingSupport(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("support must be strictly increasing: {0:?}")]
    UnsortedSupport(Vec<usize>),
    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("invalid coordinate {path:?} for order {k}")]
    InvalidCoordinate { path: Vec<usize>, k: usize },
    #[error("{what} needs {requested} units, cap is {cap}")]
    ResourceCap { what: &'static str, requested: u128, cap: u128 },
    #[error("operator is not positive: {0}")]
    NotPositive(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{quantity}: routes disagree ({left} vs {right})")]
    ConsistencyFailure { quantity: &'static str, left: f64, right: f64 },
    #[error("no symmetry-broken phase: Delta = {delta} <= 0")]
    NoBrokenPhase { delta: f64 },
    #[error("Delta has no sign change on (1, {theta_max}] for J = {j}")]
    NoRoot { j: f64, theta_max: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
