use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("regime boundary p == n_v*m unsupported (p = {p})")]
    RegimeBoundary { p: usize },

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("covariance is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPositiveSemidefinite { eigenvalue: f64 },

    #[error("ill-conditioned design (Gram condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("flat objective: loss does not depend on alpha_r")]
    FlatObjective,

    #[error("unknown moment expression `{0}`")]
    UnknownExpression(String),

    #[error("discard budget exceeded: {discarded} ill-conditioned draws over {runs} runs (budget {budget})")]
    DiscardBudgetExceeded {
        discarded: usize,
        runs: usize,
        budget: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numerical failures, as opposed to caller mistakes.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. } | Error::DiscardBudgetExceeded { .. }
        )
    }
}
