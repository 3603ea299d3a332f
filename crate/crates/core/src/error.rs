use thiserror::Error;

/// Errors produced by the forecasting library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance matrix: {0}")]
    InvalidCovariance(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("period {t} is outside the supported range {start}..{end}")]
    OutOfRange { t: usize, start: usize, end: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("weight {0} is on the simplex boundary")]
    SimplexBoundary(usize),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("numerically singular system (I + lambda L K) at lambda = {lambda}")]
    Singular { lambda: f64 },

    #[error("all cross-validation candidates failed: {0}")]
    AllCandidatesFailed(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
