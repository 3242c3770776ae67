//! The shared neural-network dynamics model: evaluation, analytic Jacobians
//! (plain and history-augmented), training and persistence.

mod features;
mod history;
pub mod io;
mod mlp;
mod model;
mod train;

use thiserror::Error;

pub use features::{encode_state, feature_width, state_difference, wrap_angle, FeatureKind};
pub use history::HistoryWindow;
pub use io::{load, save};
pub use mlp::{Dense, Workspace};
pub use model::{DynamicsModel, ModelShape, Normalizer};
pub use train::{evaluate_loss, train, TrainConfig, TrainReport, TransitionSample};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("augmented linearization needs history_len >= 1; use `jacobians` for a model without history")]
    NoHistory,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite value in sample {index}")]
    NonFinite { index: usize },
    #[error("model file format error: {0}")]
    Format(String),
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("truncated model file: {0}")]
    Truncated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ModelError {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        ModelError::Dimension { what, expected, got }
    }
}

#[cfg(test)]
mod tests;
