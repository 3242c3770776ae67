//! Experiment runner: configuration, the two-rate control loop, metrics,
//! comparisons and the end-to-end pipeline.

mod config;
mod episode;
mod report;

pub use config::{
    CollectSection, EnvSection, ExperimentConfig, Mode, ModelSection, ModelSourceKind, PlannerSection, TaskSection,
    TrackingSection,
};
pub use episode::{initial_state, run_episode, MetricsReport};
pub use report::{compare, pipeline, Comparison, Manifest};

use anyhow::{Context, Result};
use std::path::Path;

use crate::environments::collect_dataset;
use crate::nn_dynamics::{self, DynamicsModel, TrainReport, TransitionSample};

pub fn collect(cfg: &ExperimentConfig) -> Result<Vec<TransitionSample>> {
    Ok(collect_dataset(&cfg.env_spec(), &cfg.model_shape(), &cfg.collect_config())?)
}

pub fn train_model(cfg: &ExperimentConfig, data: &[TransitionSample]) -> Result<(DynamicsModel, TrainReport)> {
    Ok(nn_dynamics::train(&cfg.model_shape(), data, &cfg.model.train)?)
}

/// Loads the configured model file, or collects data and trains afresh.
pub fn obtain_model(cfg: &ExperimentConfig) -> Result<(DynamicsModel, Option<TrainReport>)> {
    match cfg.model.source {
        ModelSourceKind::Load => {
            let path = Path::new(&cfg.model.path);
            let model = nn_dynamics::load(path).with_context(|| format!("loading model {}", path.display()))?;
            anyhow::ensure!(
                model.shape().state_features == cfg.env_spec().features()
                    && model.history_len() == cfg.model.history_len,
                "model {} does not match the configured environment or history length",
                path.display()
            );
            Ok((model, None))
        }
        ModelSourceKind::Train => {
            let data = collect(cfg).context("collecting data")?;
            let (model, report) = train_model(cfg, &data).context("training")?;
            Ok((model, Some(report)))
        }
    }
}

#[cfg(test)]
mod tests;
