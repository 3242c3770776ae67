use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::environments::{
    CartpoleParams, CollectConfig, Disturbance, DisturbanceKind, EnvSpec, ExplorationPolicy, PathWeights, Physics,
    VehicleParams,
};
use crate::nn_dynamics::{ModelShape, TrainConfig};
use crate::smppi::{ControlSpace, MppiConfig};
use crate::types::ActionBounds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    /// Planner and actuation both at the slow rate.
    MppiOnly,
    /// Slow plan held across fast steps, no feedback.
    ZohMppi,
    /// Slow plan plus fast TVLQR feedback.
    Toast,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::MppiOnly => "mppi_only",
            Mode::ZohMppi => "zoh_mppi",
            Mode::Toast => "toast",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub physics: Physics,
    pub bounds: ActionBounds,
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSourceKind {
    Train,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub source: ModelSourceKind,
    /// Model file, used when `source = "load"`.
    #[serde(default)]
    pub path: String,
    pub history_len: usize,
    pub hidden: Vec<usize>,
    pub collect: CollectSection,
    pub train: TrainConfig,
}

/// Dataset recipe; the hold length comes from `n_fast`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectSection {
    pub policy: ExplorationPolicy,
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub explore_bounds: Option<ActionBounds>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub samples: usize,
    pub horizon: usize,
    pub temperature: f64,
    pub noise_std: Vec<f64>,
    pub action_noise_std: Vec<f64>,
    pub action_weight: Vec<f64>,
    pub derivative_weight: Vec<f64>,
    pub control_space: ControlSpace,
    /// SMPPI iterations per replan.
    pub iterations: usize,
    /// Extra iterations before the first step.
    pub warmup_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingSection {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub q_final: Vec<f64>,
    /// Linearize over the history-augmented state.
    pub augmented: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSection {
    /// Quadratic regulation to a goal state.
    Regulate {
        goal: Vec<f64>,
        weights: Vec<f64>,
        terminal_weights: Vec<f64>,
        /// Radius of the goal band used for recovery time.
        band: f64,
    },
    /// Figure-eight path following.
    Path {
        radius: f64,
        offset: f64,
        spacing: f64,
        max_speed: f64,
        weights: PathWeights,
        /// Lateral band used for recovery time.
        band: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub env: EnvSection,
    pub model: ModelSection,
    pub planner: PlannerSection,
    pub tracking: TrackingSection,
    pub task: TaskSection,
    pub mode: Mode,
    /// Modes run by `compare` and `pipeline`.
    pub compare_modes: Vec<Mode>,
    /// Fast steps per planner step.
    pub n_fast: usize,
    pub fast_dt: f64,
    pub episode_length: f64,
    pub initial_state: Vec<f64>,
    /// Per-seed uniform perturbation half-widths of the initial state.
    pub initial_spread: Vec<f64>,
    pub disturbances: Vec<Disturbance>,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    /// Publish each new plan one fast step late.
    pub compute_delay: bool,
}

fn base(preset: &str, env: EnvSpec) -> ExperimentConfig {
    let n_u = env.n_u();
    ExperimentConfig {
        preset: preset.to_string(),
        env: EnvSection { physics: env.physics, bounds: env.bounds, substeps: env.substeps },
        model: ModelSection {
            source: ModelSourceKind::Train,
            path: String::new(),
            history_len: 1,
            hidden: vec![64, 64],
            collect: CollectSection {
                policy: ExplorationPolicy::UniformRandom,
                episodes: 50,
                steps: 200,
                seed: 1,
                explore_bounds: None,
            },
            train: TrainConfig::default(),
        },
        planner: PlannerSection {
            samples: 256,
            horizon: 30,
            temperature: 1.0,
            noise_std: vec![1.0; n_u],
            action_noise_std: vec![1.0; n_u],
            action_weight: vec![0.0; n_u],
            derivative_weight: vec![0.0; n_u],
            control_space: ControlSpace::Derivative,
            iterations: 1,
            warmup_iterations: 0,
        },
        tracking: TrackingSection { q: vec![], r: vec![1.0; n_u], q_final: vec![], augmented: true },
        task: TaskSection::Regulate { goal: vec![], weights: vec![], terminal_weights: vec![], band: 0.2 },
        mode: Mode::Toast,
        compare_modes: vec![Mode::ZohMppi, Mode::Toast],
        n_fast: 5,
        fast_dt: 0.01,
        episode_length: 10.0,
        initial_state: vec![],
        initial_spread: vec![],
        disturbances: vec![],
        seeds: (0..10).collect(),
        output_dir: format!("out/{preset}"),
        compute_delay: false,
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c;
        match name {
            "pendulum" => {
                c = base(name, EnvSpec::pendulum());
                c.planner.noise_std = vec![15.0];
                c.planner.action_noise_std = vec![2.5];
                c.planner.action_weight = vec![0.01];
                c.planner.derivative_weight = vec![1e-3];
                c.planner.temperature = 10.0;
                c.tracking.q = vec![10.0, 1.0];
                c.tracking.q_final = vec![10.0, 1.0];
                c.tracking.r = vec![0.1];
                c.task = TaskSection::Regulate {
                    goal: vec![0.0, 0.0],
                    weights: vec![20.0, 1.0],
                    terminal_weights: vec![100.0, 5.0],
                    band: 0.2,
                };
                c.initial_state = vec![std::f64::consts::PI, 0.0];
                c.initial_spread = vec![0.3, 0.3];
                c.disturbances = vec![Disturbance {
                    kind: DisturbanceKind::Step,
                    channel: 0,
                    magnitude: 2.5,
                    t_start: 5.0,
                    t_end: 6.0,
                }];
            }
            "cartpole" => {
                c = base(name, EnvSpec::cartpole());
                c.model.collect.episodes = 200;
                c.model.collect.steps = 60;
                c.planner.noise_std = vec![20.0];
                c.planner.action_noise_std = vec![5.0];
                c.planner.action_weight = vec![0.001];
                c.planner.derivative_weight = vec![1e-3];
                c.planner.temperature = 10.0;
                c.tracking.q = vec![1.0, 10.0, 1.0, 1.0];
                c.tracking.q_final = vec![1.0, 10.0, 1.0, 1.0];
                c.tracking.r = vec![0.01];
                c.task = TaskSection::Regulate {
                    goal: vec![0.0; 4],
                    weights: vec![1.0, 20.0, 0.5, 2.0],
                    terminal_weights: vec![10.0, 100.0, 1.0, 1.0],
                    band: 0.2,
                };
                if let Physics::Cartpole(p) = &mut c.env.physics {
                    *p = CartpoleParams { pole_length: 1.0, pole_mass: 0.2, ..Default::default() };
                }
                c.initial_state = vec![0.0; 4];
                c.initial_spread = vec![0.3, 0.2, 0.1, 0.1];
                c.disturbances = vec![Disturbance {
                    kind: DisturbanceKind::PulseTrain { period: 1.0, duty: 0.2 },
                    channel: 0,
                    magnitude: 4.0,
                    t_start: 3.0,
                    t_end: 7.0,
                }];
            }
            "vehicle" => {
                c = base(name, EnvSpec::vehicle());
                c.model.hidden = vec![64, 64];
                c.model.collect.episodes = 100;
                c.model.collect.steps = 100;
                c.model.collect.policy = ExplorationPolicy::Mixed;
                c.model.collect.explore_bounds = Some(ActionBounds::new(vec![-1.0, -4.0], vec![1.0, 3.0]));
                c.planner.noise_std = vec![3.0, 4.0];
                c.planner.action_noise_std = vec![0.3, 1.5];
                c.planner.action_weight = vec![0.0, 0.0];
                c.planner.derivative_weight = vec![0.002, 0.001];
                c.planner.temperature = 1.0;
                c.tracking.q = vec![1.0, 1.0, 10.0, 1.0, 1.0, 1.0, 1.0];
                c.tracking.q_final = c.tracking.q.clone();
                c.tracking.r = vec![1.0, 0.1];
                c.task = TaskSection::Path {
                    radius: 20.0,
                    offset: 30.0,
                    spacing: 0.1,
                    max_speed: 20.0,
                    weights: PathWeights::default(),
                    band: 0.5,
                };
                if let Physics::Vehicle(p) = &mut c.env.physics {
                    *p = VehicleParams::default();
                }
                let h = (20.0f64 / 30.0).asin();
                c.initial_state = vec![0.0, 0.0, h, 11.0, 0.0, 0.0, 0.0];
                c.initial_spread = vec![0.3, 0.3, 0.02, 0.5, 0.0, 0.0, 0.0];
                c.episode_length = 12.0;
                c.disturbances = vec![Disturbance {
                    kind: DisturbanceKind::FrictionShift,
                    channel: 0,
                    magnitude: 0.6,
                    t_start: 4.0,
                    t_end: 1e9,
                }];
            }
            "linear" => {
                c = base(name, EnvSpec::linear());
                c.model.hidden = vec![32];
                c.planner.noise_std = vec![10.0];
                c.planner.action_noise_std = vec![1.0];
                c.tracking.q = vec![1.0, 1.0];
                c.tracking.q_final = vec![1.0, 1.0];
                c.task = TaskSection::Regulate {
                    goal: vec![0.0, 0.0],
                    weights: vec![1.0, 0.1],
                    terminal_weights: vec![1.0, 0.1],
                    band: 0.1,
                };
                c.initial_state = vec![1.0, 0.0];
                c.initial_spread = vec![0.0, 0.0];
                c.episode_length = 5.0;
            }
            other => bail!("unknown preset {other:?} (expected pendulum, cartpole, vehicle or linear)"),
        }
        Ok(c)
    }

    /// Parses a TOML document, deep-merged over the preset named by its
    /// `preset` key, and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().context("config is not valid TOML")?;
        let preset =
            user.get("preset").and_then(|v| v.as_str()).context("config needs a top-level `preset` key")?.to_string();
        let base = toml::Table::try_from(Self::preset(&preset)?).context("serializing preset")?;
        let merged = merge(base, user);
        let cfg: ExperimentConfig = merged.try_into().context("config does not match the schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec {
            physics: self.env.physics.clone(),
            bounds: self.env.bounds.clone(),
            dt: self.fast_dt,
            substeps: self.env.substeps,
        }
    }

    pub fn planner_dt(&self) -> f64 {
        self.fast_dt * self.n_fast as f64
    }

    /// Episode length in fast steps, rounded to whole planner periods.
    pub fn fast_steps(&self) -> usize {
        let knots = (self.episode_length / self.planner_dt()).round() as usize;
        knots * self.n_fast
    }

    pub fn model_shape(&self) -> ModelShape {
        let spec = self.env_spec();
        ModelShape {
            n_x: spec.n_x(),
            n_u: spec.n_u(),
            history_len: self.model.history_len,
            state_features: spec.features(),
            hidden: self.model.hidden.clone(),
        }
    }

    pub fn collect_config(&self) -> CollectConfig {
        let c = &self.model.collect;
        CollectConfig {
            policy: c.policy,
            episodes: c.episodes,
            steps: c.steps,
            hold: self.n_fast,
            seed: c.seed,
            explore_bounds: c.explore_bounds.clone(),
        }
    }

    pub fn mppi_config(&self, seed: u64) -> MppiConfig {
        let p = &self.planner;
        MppiConfig {
            samples: p.samples,
            horizon: p.horizon,
            dt: self.planner_dt(),
            temperature: p.temperature,
            noise_std: p.noise_std.clone(),
            action_noise_std: p.action_noise_std.clone(),
            action_weight: p.action_weight.clone(),
            derivative_weight: p.derivative_weight.clone(),
            bounds: self.env.bounds.clone(),
            control_space: p.control_space,
            seed,
        }
    }

    pub fn band(&self) -> f64 {
        match self.task {
            TaskSection::Regulate { band, .. } | TaskSection::Path { band, .. } => band,
        }
    }

    pub fn output_path(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.env_spec();
        spec.validate()?;
        let (n_x, n_u) = (spec.n_x(), spec.n_u());
        ensure!(self.n_fast >= 1, "n_fast must be at least 1");
        ensure!(self.fast_dt > 0.0, "fast_dt must be positive");
        ensure!(self.episode_length > 0.0, "episode_length must be positive");
        ensure!(self.fast_steps() > 0, "episode shorter than one planner period");
        ensure!(self.initial_state.len() == n_x, "initial_state needs {n_x} entries");
        ensure!(self.initial_spread.len() == n_x, "initial_spread needs {n_x} entries");
        ensure!(self.initial_spread.iter().all(|s| *s >= 0.0), "initial_spread must be nonnegative");
        ensure!(!self.seeds.is_empty(), "at least one seed is required");
        ensure!(!self.compare_modes.is_empty(), "compare_modes must not be empty");
        ensure!(self.planner.iterations >= 1, "planner.iterations must be at least 1");
        ensure!(self.tracking.r.len() == n_u, "tracking.r needs {n_u} entries");
        ensure!(
            self.tracking.q.len() == n_x && self.tracking.q_final.len() == n_x,
            "tracking.q and tracking.q_final need {n_x} entries"
        );
        ensure!(self.tracking.r.iter().all(|r| *r > 0.0), "tracking.r must be positive");
        ensure!(
            self.tracking.q.iter().chain(&self.tracking.q_final).all(|q| *q >= 0.0),
            "tracking weights must be nonnegative"
        );
        if self.tracking.augmented {
            ensure!(self.model.history_len >= 1, "augmented tracking needs history_len >= 1");
        }
        match &self.task {
            TaskSection::Regulate { goal, weights, terminal_weights, band } => {
                ensure!(
                    goal.len() == n_x && weights.len() == n_x && terminal_weights.len() == n_x,
                    "task goal and weights need {n_x} entries"
                );
                ensure!(*band > 0.0, "task band must be positive");
            }
            TaskSection::Path { radius, offset, spacing, max_speed, band, .. } => {
                ensure!(matches!(self.env.physics, Physics::Vehicle(_)), "path task needs the vehicle");
                ensure!(*offset > *radius, "path offset must exceed the loop radius");
                ensure!(
                    *radius > 0.0 && *spacing > 0.0 && *max_speed > 0.0 && *band > 0.0,
                    "path task values must be positive"
                );
            }
        }
        for d in &self.disturbances {
            d.validate(n_u)?;
        }
        if self.model.source == ModelSourceKind::Load {
            ensure!(!self.model.path.is_empty(), "model.path is required when source = \"load\"");
        }
        self.model_shape().validate()?;
        self.model.train.validate()?;
        self.mppi_config(0).validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the effective TOML, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let placeless = ExperimentConfig { output_dir: String::new(), ..self.clone() };
        let digest = Sha256::digest(placeless.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Effective config with its hash as a leading comment.
    pub fn dump(&self) -> String {
        format!("# sha256 {}\n{}", self.hash(), self.to_toml())
    }

    /// Copy with a different mode; everything else untouched.
    pub fn with_mode(&self, mode: Mode) -> Self {
        ExperimentConfig { mode, ..self.clone() }
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                // a different enum tag replaces the whole table
                let same_tag = ["kind", "type"].iter().all(|t| o.get(*t).is_none() || o.get(*t) == b.get(*t));
                let v = if same_tag { merge(b, o) } else { o };
                base.insert(k, toml::Value::Table(v));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
