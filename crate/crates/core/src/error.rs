use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no tokens were generated")]
    NoTokens,

    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),

    #[error("outcome set is empty")]
    EmptyOutcomes,

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("observed value at index {index} is zero; MAPE is undefined")]
    ZeroObserved { index: usize },

    #[error("length mismatch: {predicted} predicted vs {observed} observed")]
    LengthMismatch { predicted: usize, observed: usize },

    #[error("Kendall's tau needs at least 2 samples, got {0}")]
    TooFewForTau(usize),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("engine invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
