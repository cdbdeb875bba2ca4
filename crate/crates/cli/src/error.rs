use std::path::Path;

use thiserror::Error;

use phenotime::augment::AugmentError;
use phenotime::data::DataError;
use phenotime::eval::EvalError;
use phenotime::losses::LossError;
use phenotime::model::ModelError;
use phenotime::synth::SynthError;
use phenotime::train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Train(String),
    #[error("{0}")]
    Eval(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Precondition(String),
}

impl CliError {
    /// Stable category name printed on failure.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "data",
            CliError::Model(_) => "model",
            CliError::Train(_) => "train",
            CliError::Eval(_) => "eval",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Precondition(_) => "precondition",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Data(_) => 4,
            CliError::Model(_) | CliError::Checkpoint(_) => 5,
            CliError::Train(_) => 6,
            CliError::Eval(_) => 7,
            CliError::Precondition(_) => 8,
        }
    }

    /// `error: <category>: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error: {}: {msg}", self.category())
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            msg: err.to_string(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { path, source } => CliError::Io {
                path,
                msg: source.to_string(),
            },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Checkpoint(m) => CliError::Checkpoint(m),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(_) => CliError::Config(e.to_string()),
            SynthError::Data(d) => d.into(),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Train(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Loss(l) => l.into(),
            TrainError::Augment(a) => a.into(),
            other => CliError::Train(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e.to_string())
    }
}
