use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("random regular generator gave up after {0} retries")]
    RetryBudget(usize),
    #[error("inputs not sufficiently exciting: observed rank {rank} of {expected}")]
    NotExciting { rank: usize, expected: usize },
    #[error("insufficient excitation or wrong state dimension: {0}")]
    RankDeficient(String),
    #[error("principal logarithm undefined: eigenvalue {0}")]
    LogUndefined(String),
    #[error("state diverged at step {0}")]
    Overflow(usize),
    #[error("no convergence after {iterations} iterations (last change {last:.3e})")]
    NoConvergence { iterations: usize, last: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::Dimension(_) | Error::Infeasible(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
