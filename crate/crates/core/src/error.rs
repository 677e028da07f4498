use thiserror::Error;

/// Errors raised by the sensitivity-analysis core.
#[derive(Debug, Error)]
pub enum Error {
    /// Covariance/correlation not symmetric, not positive-definite, or otherwise unusable.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// A value lies outside the support of a marginal.
    #[error("value {value} is outside the support of input {input}")]
    Domain { input: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid index set: {0}")]
    IndexSet(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Problem too large for enumeration, or a count overflowed.
    #[error("size error: {0}")]
    Size(String),

    /// The output variance is zero (or numerically so); indices are undefined.
    #[error("degenerate output: {0}")]
    DegenerateOutput(String),

    #[error("model evaluation failed at row {row}: {message}")]
    ModelEvaluation { row: usize, message: String },

    #[error("external model failed: {message}\n--- stderr ---\n{stderr}")]
    ExternalModel { message: String, stderr: String },

    #[error("ill-conditioned kriging covariance: {0}")]
    IllConditioned(String),

    #[error("kriging fit failed: {0}")]
    FitFailure(String),

    #[error("malformed surrogate file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
