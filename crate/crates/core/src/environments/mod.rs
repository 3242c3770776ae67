//! Ground-truth simulators, disturbances, episode logs and data collection.

mod dataset;
mod disturbance;
mod log;
mod physics;
mod track;

pub use dataset::{collect_dataset, CollectConfig, ExplorationPolicy};
pub use disturbance::{combined_effect, inject, Disturbance, DisturbanceKind, Injection};
pub use log::{fmt_f64, EpisodeLog, StepRecord};
pub use physics::{
    CartpoleParams, Coord, Effect, EnvSpec, LinearParams, PendulumParams, Physics, VehicleParams, GRAVITY,
};
pub use track::{PathCost, PathWeights, Projection, Track};

use thiserror::Error;

use crate::nn_dynamics::ModelError;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment: {0}")]
    Spec(String),
    #[error("invalid disturbance: {0}")]
    Disturbance(String),
    #[error("{what} has {got} entries, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("non-finite state or action")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[cfg(test)]
mod tests;
