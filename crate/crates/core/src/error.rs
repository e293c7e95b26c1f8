use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid BDF step number {0}: expected 1..=6")]
    InvalidStepNumber(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("smoothing order m={m} is insufficient for mu={mu}: need mu + m > 0")]
    SmoothingInsufficient { mu: f64, m: usize },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid spatial resolution M={0}: expected M >= 2")]
    InvalidResolution(usize),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("oracle outside its domain: {0}")]
    OracleDomain(String),

    #[error("undefined convergence order: {0}")]
    UndefinedOrder(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

pub type Result<T> = std::result::Result<T, Error>;
