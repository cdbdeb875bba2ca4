//! Kernel-weighted prediction losses, monotonicity and smoothness penalties,
//! the representation-concordance loss, and the composed training objectives.

mod kernel;
mod objective;
mod terms;

pub use kernel::{gold_weights, kernel_weights, silver_weights, KernelConfig, LabelRule};
pub use objective::{
    build_objective, evaluate, loss_contrastive, loss_pretrain, loss_semisup, loss_supervised, loss_unsupervised,
    penalty_cum, penalty_rec, Batch, Components, Evaluation, ObjectiveNodes, Stage,
};
pub use terms::{contrast, monotone_drop, smoothness, weighted_ce, PROB_CLAMP};

use thiserror::Error;

use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("patient {0}: missing silver labels")]
    MissingSilver(String),
    #[error("patient {0}: missing gold labels")]
    MissingGold(String),
    #[error("{what}: expected length {expected}, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("no labeled patients")]
    NoLabeled,
    #[error("empty synthetic set")]
    EmptySynthetic,
    #[error("loss config: {0}")]
    Config(String),
}

/// Which longitudinal regularizer accompanies the prediction losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    /// Penalize decreases of the predicted probability between consecutive visits.
    Cumulative,
    /// Penalize the distance between consecutive visit representations.
    Recurrent,
}

/// Head whose probabilities the cumulative penalty reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyHead {
    Silver,
    Gold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kernel: KernelConfig,
    pub penalty: Penalty,
    pub penalty_head: PenaltyHead,
    /// Penalty weight.
    pub lambda: f64,
    /// Weight of the silver-label loss during fine-tuning.
    pub gamma: f64,
    /// Weight of the concordance loss.
    pub kappa_cc: f64,
    /// Concordance margin.
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kernel: KernelConfig::default(),
            penalty: Penalty::Cumulative,
            penalty_head: PenaltyHead::Silver,
            lambda: 0.5,
            gamma: 0.1,
            kappa_cc: 0.1,
            margin: 10.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        self.kernel.validate()?;
        for (name, v) in [("lambda", self.lambda), ("gamma", self.gamma), ("kappa_cc", self.kappa_cc)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LossError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(LossError::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }
}
