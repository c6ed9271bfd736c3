use panelctrl_core::Error;

pub const OK: i32 = 0;
pub const INPUT: i32 = 3;
pub const CONFIG: i32 = 4;
pub const NUMERICAL: i32 = 5;
pub const IO: i32 = 6;
pub const CHECKS_FAILED: i32 = 7;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("{0} diagnostic check(s) failed; see identity_checks.csv")]
    ChecksFailed(usize),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Core(Error::Json(e))
    }
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::ChecksFailed(_) => CHECKS_FAILED,
            Self::Core(e) => match e {
                Error::DuplicateCell { .. }
                | Error::MissingCell { .. }
                | Error::UnknownTreated(_)
                | Error::TreatmentTimeOutOfRange { .. }
                | Error::InvalidPanel(_)
                | Error::Csv(_) => INPUT,
                Error::InvalidConfig(_) | Error::Dimension(_) | Error::TooFewPeriods(_) => CONFIG,
                Error::Singular(_)
                | Error::RankDeficientCovariates { .. }
                | Error::NonConvergence { .. }
                | Error::ModelNotFitted
                | Error::NotCentered
                | Error::EmptyAcceptance { .. } => NUMERICAL,
                Error::Io(_) | Error::Json(_) => IO,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
