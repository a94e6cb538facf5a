use std::process::ExitCode;

use thiserror::Error;

/// Failures grouped by the category printed as `error[<category>]: ...`.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Train(String),
    #[error("{0}")]
    Eval(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Model(_) => "model",
            CliError::Train(_) => "train",
            CliError::Eval(_) => "eval",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

macro_rules! from_core {
    ($($ty:ty => $variant:ident),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::$variant(e.to_string())
            }
        })*
    };
}

from_core! {
    sfm_core::dataset::DatasetError => Data,
    sfm_core::synth::SynthError => Data,
    sfm_core::estimators::EstimatorError => Eval,
    sfm_core::metrics::MetricsError => Eval,
    sfm_core::model::ModelError => Model,
    sfm_core::train::TrainError => Train,
    serde_json::Error => Data,
}
