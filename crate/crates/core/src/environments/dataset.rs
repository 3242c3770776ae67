use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{Effect, EnvError, EnvSpec, Physics};
use crate::nn_dynamics::{state_difference, DynamicsModel, ModelShape, TransitionSample};
use crate::types::ActionBounds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationPolicy {
    /// Independent uniform draw within bounds for every transition.
    UniformRandom,
    /// Per-episode random-frequency sine sweep on every channel.
    Sinusoidal,
    /// Alternates the two by episode parity.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    pub policy: ExplorationPolicy,
    pub episodes: usize,
    /// Transitions per episode, counting the history warm-up.
    pub steps: usize,
    /// Simulator steps per transition (action held in between).
    pub hold: usize,
    pub seed: u64,
    /// Narrower action box for exploration; defaults to the actuator bounds.
    #[serde(default)]
    pub explore_bounds: Option<ActionBounds>,
}

impl EnvSpec {
    /// Random initial state covering the region the controllers visit.
    pub fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match &self.physics {
            Physics::Pendulum(_) => vec![rng.gen_range(-PI..PI), rng.gen_range(-7.0..7.0)],
            Physics::Cartpole(_) => {
                let spread = if rng.gen_bool(0.5) { 0.6 } else { PI };
                vec![
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-2.0..2.0),
                ]
            }
            Physics::Vehicle(_) => vec![
                0.0,
                0.0,
                rng.gen_range(-PI..PI),
                rng.gen_range(4.0..16.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.3..0.3),
            ],
            Physics::Linear(p) => (0..p.a.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }
}

struct Sweep {
    freq: Vec<f64>,
    phase: Vec<f64>,
    amp: Vec<f64>,
}

/// Rolls the true simulator under an exploration policy and assembles
/// history-augmented transitions at the model rate `spec.dt · hold`.
pub fn collect_dataset(
    spec: &EnvSpec,
    shape: &ModelShape,
    cfg: &CollectConfig,
) -> Result<Vec<TransitionSample>, EnvError> {
    spec.validate()?;
    if cfg.episodes == 0 || cfg.steps == 0 || cfg.hold == 0 {
        return Err(EnvError::Spec("episodes, steps and hold must be positive".into()));
    }
    if shape.n_x != spec.n_x() || shape.n_u != spec.n_u() {
        return Err(EnvError::Spec("model shape does not match the environment".into()));
    }
    let encoder = DynamicsModel::zeros(shape.clone())?;
    let bounds = cfg.explore_bounds.clone().unwrap_or_else(|| spec.bounds.clone());
    if bounds.dim() != spec.n_u() || !bounds.is_valid() {
        return Err(EnvError::Spec("exploration bounds do not fit the action space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_u = spec.n_u();
    let none = Effect::none(n_u);
    let model_dt = spec.dt * cfg.hold as f64;
    let mut out = Vec::with_capacity(cfg.episodes * cfg.steps);
    let mut input = vec![0.0; shape.input_dim()];

    for ep in 0..cfg.episodes {
        let mut x = spec.sample_initial(&mut rng);
        let sinusoidal = match cfg.policy {
            ExplorationPolicy::UniformRandom => false,
            ExplorationPolicy::Sinusoidal => true,
            ExplorationPolicy::Mixed => ep % 2 == 1,
        };
        let sweep = Sweep {
            freq: (0..n_u).map(|_| rng.gen_range(0.1..2.0)).collect(),
            phase: (0..n_u).map(|_| rng.gen_range(0.0..2.0 * PI)).collect(),
            amp: (0..n_u).map(|_| rng.gen_range(0.5..1.0)).collect(),
        };
        let mut hist = encoder.new_history();
        for k in 0..cfg.steps {
            let u: Vec<f64> = (0..n_u)
                .map(|c| {
                    let (lo, hi) = (bounds.lower[c], bounds.upper[c]);
                    if sinusoidal {
                        let t = k as f64 * model_dt;
                        let s = (2.0 * PI * sweep.freq[c] * t + sweep.phase[c]).sin();
                        0.5 * (lo + hi) + 0.5 * (hi - lo) * sweep.amp[c] * s
                    } else {
                        rng.gen_range(lo..hi)
                    }
                })
                .collect();
            let mut next = x.clone();
            let mut applied = u.clone();
            for _ in 0..cfg.hold {
                let (n, a) = spec.step(&next, &u, &none)?;
                next = n;
                applied = a;
            }
            if hist.is_warm() {
                encoder.encode_input(&x, &applied, &hist, &mut input);
                let mut target = vec![0.0; x.len()];
                state_difference(&shape.state_features, &next, &x, &mut target);
                out.push(TransitionSample { input: input.clone(), target });
            }
            hist.push(&x, &applied)?;
            x = next;
        }
    }
    Ok(out)
}
