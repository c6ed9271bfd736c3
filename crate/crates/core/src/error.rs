use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate observation for unit `{unit}` at time `{time}`")]
    DuplicateCell { unit: String, time: String },

    #[error("missing observation for unit `{unit}` at time `{time}`")]
    MissingCell { unit: String, time: String },

    #[error("treated unit `{0}` not found in panel")]
    UnknownTreated(String),

    #[error("treatment time `{time}` must fall after the first period and no later than the last ({first}..={last})")]
    TreatmentTimeOutOfRange { time: String, first: String, last: String },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("covariate design is rank deficient; dependent columns: {columns:?}")]
    RankDeficientCovariates { columns: Vec<String> },

    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("outcome model used before it was fitted")]
    ModelNotFitted,

    #[error("lagged outcomes must be centered by the control means for this operation")]
    NotCentered,

    #[error("no candidate effect was accepted at level {alpha}; widen or refine the grid")]
    EmptyAcceptance { alpha: f64 },

    #[error("too few pre-treatment periods: {0}")]
    TooFewPeriods(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
