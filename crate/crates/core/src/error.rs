use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or point lies outside the admissible set of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A kernel was evaluated on its singular set (e.g. `x == y`).
    #[error("singular evaluation: {0}")]
    Singular(String),

    /// An integral or an iteration blew up.
    #[error("divergence: {0}")]
    Divergence(String),

    /// An iterative method ran out of iterations without meeting its tolerance.
    #[error("no convergence after {iterations} iterations: {detail}")]
    NoConvergence { iterations: usize, detail: String },

    /// Not enough data to reach a verdict (too few scales, empty sets, ...).
    #[error("inconclusive: {0}")]
    Inconclusive(String),

    /// An internal invariant was violated (e.g. non-monotone Picard step).
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
