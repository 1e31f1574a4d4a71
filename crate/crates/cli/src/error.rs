use std::fmt;

use trialign::eval::EvalError;
use trialign::training::TrainError;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config structure: exit 1.
    Usage(String),
    /// Missing, malformed or inconsistent input data: exit 2.
    Data(String),
    /// Non-finite loss, gradient or metric: exit 3.
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn data(e: impl fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::data(other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::data(other),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::data(e)
            }
        }
    )*};
}

data_errors!(
    trialign::embedstore::EmbedError,
    trialign::geometry::GeometryError,
    trialign::model::ModelError,
    trialign::synth::SynthError,
    trialign::format::FormatError
);

pub type CliResult<T> = Result<T, CliError>;
