use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use super::EnvError;
use crate::nn_dynamics::{wrap_angle, FeatureKind};
use crate::types::ActionBounds;

pub const GRAVITY: f64 = 9.81;

/// `sin θ` evaluated after reducing θ towards 0 or ±π, so that both
/// equilibria give an exact zero.
#[inline]
pub(crate) fn sin_reduced(theta: f64) -> f64 {
    if theta > FRAC_PI_2 {
        (std::f64::consts::PI - theta).sin()
    } else if theta < -FRAC_PI_2 {
        -(theta + std::f64::consts::PI).sin()
    } else {
        theta.sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams { mass: 1.0, length: 1.0, gravity: GRAVITY, damping: 0.1 }
    }
}

impl PendulumParams {
    /// `½ml²θ̇² + mgl·cos θ`, constant along undamped, unforced motion.
    pub fn energy(&self, state: &[f64]) -> f64 {
        let (m, l) = (self.mass, self.length);
        0.5 * m * l * l * state[1] * state[1] + m * self.gravity * l * state[0].cos()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub cart_damping: f64,
    pub pole_damping: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: GRAVITY,
            cart_damping: 0.1,
            pole_damping: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub front_axle: f64,
    pub rear_axle: f64,
    pub front_stiffness: f64,
    pub rear_stiffness: f64,
    pub friction: f64,
    pub gravity: f64,
    pub max_steer: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            mass: 1500.0,
            yaw_inertia: 2250.0,
            front_axle: 1.2,
            rear_axle: 1.4,
            front_stiffness: 80_000.0,
            rear_stiffness: 90_000.0,
            friction: 1.0,
            gravity: GRAVITY,
            max_steer: 0.5,
        }
    }
}

impl VehicleParams {
    /// Static normal loads `(front, rear)`.
    pub fn axle_loads(&self) -> (f64, f64) {
        let wb = self.front_axle + self.rear_axle;
        let w = self.mass * self.gravity;
        (w * self.rear_axle / wb, w * self.front_axle / wb)
    }

    /// Lateral tire forces `(F_yf, F_yr)` with linear stiffness clipped at
    /// `μ·F_z` per axle.
    pub fn tire_forces(&self, state: &[f64], mu: f64) -> (f64, f64) {
        let (vx, vy, r, delta) = (state[3], state[4], state[5], state[6]);
        let vx_eff = vx.max(1.0);
        let alpha_f = delta - (vy + self.front_axle * r).atan2(vx_eff);
        let alpha_r = -(vy - self.rear_axle * r).atan2(vx_eff);
        let (fzf, fzr) = self.axle_loads();
        let ff = (self.front_stiffness * alpha_f).clamp(-mu * fzf, mu * fzf);
        let fr = (self.rear_stiffness * alpha_r).clamp(-mu * fzr, mu * fzr);
        (ff, fr)
    }
}

/// Continuous-time `ẋ = A x + B u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams { a: vec![vec![0.0, 1.0], vec![-1.0, -0.5]], b: vec![vec![0.0], vec![1.0]] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Physics {
    Pendulum(PendulumParams),
    Cartpole(CartpoleParams),
    Vehicle(VehicleParams),
    Linear(LinearParams),
}

/// One named state coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Coord {
    pub name: &'static str,
    pub unit: &'static str,
    pub feature: FeatureKind,
}

impl Coord {
    const fn raw(name: &'static str, unit: &'static str) -> Self {
        Coord { name, unit, feature: FeatureKind::Raw }
    }
    const fn angle(name: &'static str) -> Self {
        Coord { name, unit: "rad", feature: FeatureKind::Angle }
    }
}

/// Simulator description: physics, actuator limits and control step.
///
/// `step` advances by `dt` using `substeps` RK4 steps of `dt / substeps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub physics: Physics,
    pub bounds: ActionBounds,
    pub dt: f64,
    pub substeps: usize,
}

/// What a disturbance does to one simulator step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Effect {
    /// Added to the (clamped) action, one entry per action channel.
    pub additive: Vec<f64>,
    /// Overrides the vehicle friction coefficient.
    pub friction: Option<f64>,
}

impl Effect {
    pub fn none(n_u: usize) -> Self {
        Effect { additive: vec![0.0; n_u], friction: None }
    }
}

impl EnvSpec {
    pub fn pendulum() -> Self {
        EnvSpec {
            physics: Physics::Pendulum(PendulumParams::default()),
            bounds: ActionBounds::symmetric(&[5.0]),
            dt: 0.01,
            substeps: 1,
        }
    }

    pub fn cartpole() -> Self {
        EnvSpec {
            physics: Physics::Cartpole(CartpoleParams::default()),
            bounds: ActionBounds::symmetric(&[10.0]),
            dt: 0.01,
            substeps: 1,
        }
    }

    pub fn vehicle() -> Self {
        EnvSpec {
            physics: Physics::Vehicle(VehicleParams::default()),
            bounds: ActionBounds::new(vec![-1.0, -6.0], vec![1.0, 3.0]),
            dt: 0.01,
            substeps: 2,
        }
    }

    pub fn linear() -> Self {
        EnvSpec {
            physics: Physics::Linear(LinearParams::default()),
            bounds: ActionBounds::symmetric(&[2.0]),
            dt: 0.01,
            substeps: 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.physics {
            Physics::Pendulum(_) => "pendulum",
            Physics::Cartpole(_) => "cartpole",
            Physics::Vehicle(_) => "vehicle",
            Physics::Linear(_) => "linear",
        }
    }

    pub fn coords(&self) -> Vec<Coord> {
        match &self.physics {
            Physics::Pendulum(_) => vec![Coord::angle("theta"), Coord::raw("theta_dot", "rad/s")],
            Physics::Cartpole(_) => vec![
                Coord::raw("x", "m"),
                Coord::angle("theta"),
                Coord::raw("x_dot", "m/s"),
                Coord::raw("theta_dot", "rad/s"),
            ],
            Physics::Vehicle(_) => vec![
                Coord { name: "pos_x", unit: "m", feature: FeatureKind::Ignored },
                Coord { name: "pos_y", unit: "m", feature: FeatureKind::Ignored },
                Coord::angle("yaw"),
                Coord::raw("v_x", "m/s"),
                Coord::raw("v_y", "m/s"),
                Coord::raw("yaw_rate", "rad/s"),
                Coord::raw("steer", "rad"),
            ],
            Physics::Linear(p) => {
                const NAMES: [&str; 8] = ["x0", "x1", "x2", "x3", "x4", "x5", "x6", "x7"];
                (0..p.a.len()).map(|i| Coord::raw(NAMES[i.min(7)], "-")).collect()
            }
        }
    }

    /// `(name, unit)` per action channel.
    pub fn action_names(&self) -> Vec<(&'static str, &'static str)> {
        match &self.physics {
            Physics::Pendulum(_) => vec![("torque", "N*m")],
            Physics::Cartpole(_) => vec![("force", "N")],
            Physics::Vehicle(_) => vec![("steer_rate", "rad/s"), ("accel", "m/s^2")],
            Physics::Linear(p) => {
                const NAMES: [&str; 4] = ["u0", "u1", "u2", "u3"];
                (0..p.b.first().map_or(0, |r| r.len())).map(|i| (NAMES[i.min(3)], "-")).collect()
            }
        }
    }

    pub fn n_x(&self) -> usize {
        match &self.physics {
            Physics::Pendulum(_) => 2,
            Physics::Cartpole(_) => 4,
            Physics::Vehicle(_) => 7,
            Physics::Linear(p) => p.a.len(),
        }
    }

    pub fn n_u(&self) -> usize {
        self.bounds.dim()
    }

    pub fn features(&self) -> Vec<FeatureKind> {
        self.coords().iter().map(|c| c.feature).collect()
    }

    pub fn angle_mask(&self) -> Vec<bool> {
        self.features().iter().map(|f| *f == FeatureKind::Angle).collect()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |what: &str| Err(EnvError::Spec(what.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if !self.bounds.is_valid() {
            return bad("action bounds need lower < upper on every channel");
        }
        let pos = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        let expected_u = match &self.physics {
            Physics::Pendulum(p) => {
                if !pos(&[p.mass, p.length, p.gravity]) || p.damping < 0.0 {
                    return bad("pendulum parameters must be positive (damping nonnegative)");
                }
                1
            }
            Physics::Cartpole(p) => {
                if !pos(&[p.cart_mass, p.pole_mass, p.pole_length, p.gravity])
                    || p.cart_damping < 0.0
                    || p.pole_damping < 0.0
                {
                    return bad("cartpole parameters must be positive (damping nonnegative)");
                }
                1
            }
            Physics::Vehicle(p) => {
                if !pos(&[
                    p.mass,
                    p.yaw_inertia,
                    p.front_axle,
                    p.rear_axle,
                    p.front_stiffness,
                    p.rear_stiffness,
                    p.friction,
                    p.gravity,
                    p.max_steer,
                ]) {
                    return bad("vehicle parameters must be positive");
                }
                2
            }
            Physics::Linear(p) => {
                let n = p.a.len();
                if n == 0 || n > 8 || p.a.iter().any(|r| r.len() != n) || p.b.len() != n {
                    return bad("linear system needs square A (at most 8 states) and B with matching rows");
                }
                let m = p.b[0].len();
                if m == 0 || p.b.iter().any(|r| r.len() != m) {
                    return bad("linear system B rows must share a positive width");
                }
                m
            }
        };
        if self.n_u() != expected_u {
            return Err(EnvError::Dimension { what: "action bounds", expected: expected_u, got: self.n_u() });
        }
        Ok(())
    }

    /// Time derivative of the state for an already clamped and disturbed action.
    pub fn derivative(&self, x: &[f64], u: &[f64], friction: Option<f64>, dx: &mut [f64]) {
        match &self.physics {
            Physics::Pendulum(p) => {
                let ml2 = p.mass * p.length * p.length;
                dx[0] = x[1];
                dx[1] = p.gravity / p.length * sin_reduced(x[0]) - p.damping / ml2 * x[1] + u[0] / ml2;
            }
            Physics::Cartpole(p) => {
                let (mc, mp, l) = (p.cart_mass, p.pole_mass, p.pole_length);
                let (s, c) = (sin_reduced(x[1]), x[1].cos());
                let (xd, td) = (x[2], x[3]);
                // M [ẍ, θ̈]ᵀ = rhs with M = [[mc+mp, mp l c], [mp l c, mp l²]]
                let r1 = u[0] - p.cart_damping * xd + mp * l * td * td * s;
                let r2 = mp * p.gravity * l * s - p.pole_damping * td;
                let det = mp * l * l * (mc + mp * s * s);
                let xdd = (mp * l * l * r1 - mp * l * c * r2) / det;
                let tdd = ((mc + mp) * r2 - mp * l * c * r1) / det;
                dx[0] = xd;
                dx[1] = td;
                dx[2] = xdd;
                dx[3] = tdd;
            }
            Physics::Vehicle(p) => {
                let mu = friction.unwrap_or(p.friction);
                let (psi, vx, vy, r, delta) = (x[2], x[3], x[4], x[5], x[6]);
                let (ff, fr) = p.tire_forces(x, mu);
                let ax = u[1].clamp(-mu * p.gravity, mu * p.gravity);
                let steer_rate = if (delta >= p.max_steer && u[0] > 0.0) || (delta <= -p.max_steer && u[0] < 0.0) {
                    0.0
                } else {
                    u[0]
                };
                let (sd, cd) = delta.sin_cos();
                let (sp, cp) = psi.sin_cos();
                dx[0] = vx * cp - vy * sp;
                dx[1] = vx * sp + vy * cp;
                dx[2] = r;
                dx[3] = ax - ff * sd / p.mass + r * vy;
                dx[4] = (ff * cd + fr) / p.mass - r * vx;
                dx[5] = (p.front_axle * ff * cd - p.rear_axle * fr) / p.yaw_inertia;
                dx[6] = steer_rate;
            }
            Physics::Linear(p) => {
                for (i, d) in dx.iter_mut().enumerate() {
                    *d = p.a[i].iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
                        + p.b[i].iter().zip(u).map(|(b, v)| b * v).sum::<f64>();
                }
            }
        }
    }

    fn finish(&self, x: &mut [f64]) {
        for (v, c) in x.iter_mut().zip(self.coords()) {
            if c.feature == FeatureKind::Angle {
                *v = wrap_angle(*v);
            }
        }
        if let Physics::Vehicle(p) = &self.physics {
            x[6] = x[6].clamp(-p.max_steer, p.max_steer);
        }
    }

    fn rk4(&self, x: &[f64], u: &[f64], friction: Option<f64>, h: f64) -> Vec<f64> {
        let n = x.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.derivative(x, u, friction, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.derivative(&tmp, u, friction, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.derivative(&tmp, u, friction, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        self.derivative(&tmp, u, friction, &mut k4);
        (0..n).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
    }

    /// Integrates an interval of length `h` with `n` RK4 steps and no
    /// clamping or wrapping; used by integrator checks.
    pub fn integrate_raw(&self, x: &[f64], u: &[f64], h: f64, n: usize) -> Vec<f64> {
        let mut s = x.to_vec();
        for _ in 0..n {
            s = self.rk4(&s, u, None, h / n as f64);
        }
        s
    }

    /// Advances one control step. Returns the next state and the action
    /// actually applied (clamped, before the disturbance is added).
    pub fn step(&self, state: &[f64], action: &[f64], effect: &Effect) -> Result<(Vec<f64>, Vec<f64>), EnvError> {
        if state.len() != self.n_x() {
            return Err(EnvError::Dimension { what: "state", expected: self.n_x(), got: state.len() });
        }
        if action.len() != self.n_u() {
            return Err(EnvError::Dimension { what: "action", expected: self.n_u(), got: action.len() });
        }
        if state.iter().chain(action).chain(&effect.additive).any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite);
        }
        let mut applied = action.to_vec();
        self.bounds.clamp(&mut applied);
        let mut u = applied.clone();
        for (v, d) in u.iter_mut().zip(&effect.additive) {
            *v += d;
        }
        let h = self.dt / self.substeps as f64;
        let mut x = state.to_vec();
        for _ in 0..self.substeps {
            x = self.rk4(&x, &u, effect.friction, h);
            self.finish(&mut x);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite);
        }
        Ok((x, applied))
    }
}
