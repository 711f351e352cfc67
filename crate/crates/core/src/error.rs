use thiserror::Error;

use crate::copulas::CopulaFamily;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{family} copula does not support dimension {dim}")]
    UnsupportedDimension { family: CopulaFamily, dim: usize },

    #[error("copula argument {0} is outside the open unit interval")]
    NonInterior(f64),

    #[error("Kendall's tau {tau} is not attainable by the {family} family")]
    UnattainableTau { family: CopulaFamily, tau: f64 },

    #[error("weights sum to zero or are not finite")]
    ZeroWeights,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("state index {index} out of range for a {count}-state model")]
    InvalidState { index: usize, count: usize },

    #[error("non-finite log-density at t={t}, state={state}")]
    NonFiniteDensity { t: usize, state: usize },

    #[error("enumeration over {paths} state paths exceeds the limit")]
    InstanceTooLarge { paths: f64 },

    #[error("state {state} collapsed (effective weight {weight:e})")]
    StateCollapse { state: usize, weight: f64 },

    #[error("copula parameter search failed: {0}")]
    OptimizerFailure(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("label matching over {0}! permutations is not supported (max 8 states)")]
    TooManyStates(usize),

    #[error("no closed-form zero-one loss for the {0} family")]
    NoClosedForm(CopulaFamily),

    #[error("no candidate copula family could be fitted")]
    NoFamilyFits,

    #[error("singular matrix (condition number {condition:e})")]
    SingularMatrix { condition: f64 },

    #[error("{dropped} of {total} bootstrap replicates failed")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("model file: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("model file: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Coarse category used by the command-line surface.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io(_) | Error::Csv(_) | Error::Parse { .. } | Error::TomlDe(_) | Error::TomlSer(_) => "io",
            Error::InvalidParameter(_)
            | Error::UnsupportedDimension { .. }
            | Error::NonInterior(_)
            | Error::UnattainableTau { .. }
            | Error::InvalidModel(_)
            | Error::InvalidTrajectory(_)
            | Error::InvalidState { .. }
            | Error::LengthMismatch { .. }
            | Error::TooManyStates(_)
            | Error::NoClosedForm(_)
            | Error::InstanceTooLarge { .. }
            | Error::InsufficientData(_) => "validation",
            _ => "compute",
        }
    }
}
