use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("solvability violated: |<rhs,1>| = {residual:e} exceeds {tol:e}")]
    Solvability { residual: f64, tol: f64 },
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("negative distribution after step at t = {t}: min value {min:e}; reduce dt")]
    StepSize { t: f64, min: f64 },
    #[error("positivity lost: {0}")]
    Positivity(String),
    #[error("picard iteration failed ({reason:?}) after {iterations} iterations, last difference {last_diff:e}")]
    PicardDivergence {
        reason: DivergenceReason,
        iterations: usize,
        last_diff: f64,
    },
    #[error("invariant failure: {0}")]
    Invariant(String),
    #[error("io: {0}")]
    Io(String),
}

/// Why a Picard step was abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum DivergenceReason {
    /// Initial energy above the configured smallness threshold.
    Smallness,
    /// Iterates did not settle within the iteration budget.
    MaxIter,
    /// An iterate left the positivity region.
    Positivity,
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
