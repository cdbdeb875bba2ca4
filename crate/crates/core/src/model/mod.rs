//! Visit representation model and its parameters.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, Moments};
pub use forward::{
    bigru_forward, concept_weights, kernel_scores, predict, predict_many, visit_attention, visit_embed,
    ModelGraph, PatientNodes, Prediction,
};
pub use params::{ModelDims, ModelParams, ParamId};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{what}: expected {expected}, found {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{param}: expected shape {expected:?}, found {found:?}")]
    Shape {
        param: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}
