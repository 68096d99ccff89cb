use thiserror::Error;

use crate::device::FockLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("Fock truncation of {levels} levels per mode is too small (need at least {min})")]
    Truncation { levels: usize, min: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("ambiguous labeling for {label}: best overlap {overlap:.3} is below 0.5")]
    AmbiguousLabel { label: FockLabel, overlap: f64 },

    #[error("degenerate pulse: {samples} sample(s), need at least 2")]
    DegeneratePulse { samples: usize },

    #[error("transfer model cannot be inverted: {0}")]
    NonInvertibleModel(String),

    #[error("interface mismatch: {0}")]
    Interface(String),

    #[error("step-halving changed the propagator by {delta:.3e} (tolerance {tolerance:.1e})")]
    Convergence { delta: f64, tolerance: f64 },

    #[error("conditional phase undefined: |<{state}|U|{state}>| = {magnitude:.3}")]
    UndefinedPhase { state: &'static str, magnitude: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("invalid channel: {0}")]
    Channel(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}

impl Error {
    /// Process exit code used by the command line front end: 2 for bad input,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_)
            | Error::Truncation { .. }
            | Error::DegeneratePulse { .. }
            | Error::Interface(_)
            | Error::Configuration(_)
            | Error::Validation(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::TomlDe(_) => 2,
            _ => 3,
        }
    }
}
