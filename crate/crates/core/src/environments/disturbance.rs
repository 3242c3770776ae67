use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Effect, EnvError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceKind {
    /// Constant `magnitude` over the window.
    Step,
    /// `magnitude` during the first `duty` fraction of every `period`,
    /// counted from `t_start`.
    PulseTrain { period: f64, duty: f64 },
    /// Piecewise-constant values drawn uniformly from ±`magnitude`,
    /// redrawn every `hold` seconds.
    RandomSteps { hold: f64, seed: u64 },
    /// Replaces the friction coefficient by `magnitude` over the window.
    FrictionShift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    /// Action channel the value is added to (ignored for friction shifts).
    #[serde(default)]
    pub channel: usize,
    /// In the units of the channel (N·m, N, ...) or dimensionless for friction.
    pub magnitude: f64,
    pub t_start: f64,
    pub t_end: f64,
}

/// Value of a disturbance at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Injection {
    Additive { channel: usize, value: f64 },
    Friction(f64),
    Inactive,
}

impl Disturbance {
    pub fn validate(&self, n_u: usize) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Disturbance(m.to_string()));
        if !(self.t_start < self.t_end) {
            return bad("t_start must precede t_end");
        }
        if !self.magnitude.is_finite() {
            return bad("magnitude must be finite");
        }
        match self.kind {
            DisturbanceKind::PulseTrain { period, duty } => {
                if !(period > 0.0) || !(0.0..=1.0).contains(&duty) {
                    return bad("pulse train needs period > 0 and duty in [0, 1]");
                }
            }
            DisturbanceKind::RandomSteps { hold, .. } if !(hold > 0.0) => return bad("hold must be positive"),
            DisturbanceKind::FrictionShift if !(self.magnitude > 0.0) => {
                return bad("friction override must be positive")
            }
            _ => {}
        }
        if !matches!(self.kind, DisturbanceKind::FrictionShift) && self.channel >= n_u {
            return bad("channel out of range");
        }
        Ok(())
    }
}

pub fn inject(d: &Disturbance, t: f64) -> Injection {
    if !(t >= d.t_start && t < d.t_end) {
        return Injection::Inactive;
    }
    let local = t - d.t_start;
    let value = match d.kind {
        DisturbanceKind::Step => d.magnitude,
        DisturbanceKind::PulseTrain { period, duty } => {
            let phase = local - (local / period).floor() * period;
            if phase < duty * period {
                d.magnitude
            } else {
                0.0
            }
        }
        DisturbanceKind::RandomSteps { hold, seed } => {
            let segment = (local / hold).floor() as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(segment);
            d.magnitude * rng.gen_range(-1.0..=1.0)
        }
        DisturbanceKind::FrictionShift => return Injection::Friction(d.magnitude),
    };
    Injection::Additive { channel: d.channel, value }
}

/// Combined effect of several disturbances; additive values sum, the last
/// active friction override wins.
pub fn combined_effect(set: &[Disturbance], t: f64, n_u: usize) -> Effect {
    let mut e = Effect::none(n_u);
    for d in set {
        match inject(d, t) {
            Injection::Additive { channel, value } => e.additive[channel] += value,
            Injection::Friction(mu) => e.friction = Some(mu),
            Injection::Inactive => {}
        }
    }
    e
}
