use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("infeasible transmission: rate must be positive (got {rate} bit/s)")]
    InfeasibleTransmission { rate: f64 },

    #[error("infeasible round: {0}")]
    InfeasibleRound(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid step size: contraction factor {factor} is outside (0, 1)")]
    InvalidStepSize { factor: f64 },

    #[error("local solver diverged after {iterations} iterations")]
    Divergence { iterations: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("privacy violation: sigma {sigma} is below the minimum {minimum}")]
    PrivacyViolation { sigma: f64, minimum: f64 },

    #[error("degenerate noise scale: deviation {deviation} * theta {theta} reaches 1")]
    DegenerateDenominator { deviation: f64, theta: f64 },

    #[error("invalid config at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}
