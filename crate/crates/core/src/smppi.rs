//! Smooth MPPI: sampling-based trajectory optimization over action
//! derivatives. Actions are the clamped running integral of the derivative
//! sequence, which keeps the commanded signal smooth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn_dynamics::{DynamicsModel, HistoryWindow, ModelError, Workspace};
use crate::types::{ActionBounds, Sequence};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("all rollouts diverged")]
    AllDiverged,
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("plan mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which space the sampler perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSpace {
    /// Smooth MPPI: white noise on action derivatives.
    Derivative,
    /// Vanilla MPPI: white noise on actions (baseline).
    Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MppiConfig {
    pub samples: usize,
    pub horizon: usize,
    /// Planner step, equal to the model's step.
    pub dt: f64,
    pub temperature: f64,
    /// Per-channel stddev of derivative noise (action units per second).
    pub noise_std: Vec<f64>,
    /// Per-channel stddev of action noise, used in [`ControlSpace::Action`].
    pub action_noise_std: Vec<f64>,
    /// ω₁: weight on squared action magnitude.
    pub action_weight: Vec<f64>,
    /// ω₂: weight on squared realized action derivative.
    pub derivative_weight: Vec<f64>,
    pub bounds: ActionBounds,
    pub control_space: ControlSpace,
    pub seed: u64,
}

impl MppiConfig {
    pub fn n_u(&self) -> usize {
        self.bounds.dim()
    }

    /// Noise stddevs may be zero (that channel is frozen); everything else
    /// must be strictly positive.
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.to_string()));
        if self.samples == 0 {
            return bad("samples must be >= 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be > 0");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if !self.bounds.is_valid() {
            return bad("action bounds need lower < upper per channel");
        }
        let n = self.n_u();
        for (name, v) in [
            ("noise_std", &self.noise_std),
            ("action_noise_std", &self.action_noise_std),
            ("action_weight", &self.action_weight),
            ("derivative_weight", &self.derivative_weight),
        ] {
            if v.len() != n {
                return Err(PlanError::Config(format!("{name} needs {n} entries")));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(PlanError::Config(format!("{name} entries must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// State cost evaluated along model rollouts.
pub trait TaskCost: Sync {
    fn running(&self, step: usize, state: &[f64], action: &[f64]) -> f64;
    fn terminal(&self, state: &[f64]) -> f64;
}

/// Diagonal quadratic cost around a goal state; flagged coordinates are
/// compared as wrapped angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub goal: Vec<f64>,
    pub weights: Vec<f64>,
    pub terminal_weights: Vec<f64>,
    pub angles: Vec<bool>,
}

impl QuadraticCost {
    fn eval(&self, w: &[f64], state: &[f64]) -> f64 {
        let mut c = 0.0;
        for i in 0..state.len() {
            let mut d = state[i] - self.goal[i];
            if self.angles[i] {
                d = crate::nn_dynamics::wrap_angle(d);
            }
            c += w[i] * d * d;
        }
        c
    }
}

impl TaskCost for QuadraticCost {
    fn running(&self, _step: usize, state: &[f64], _action: &[f64]) -> f64 {
        self.eval(&self.weights, state)
    }

    fn terminal(&self, state: &[f64]) -> f64 {
        self.eval(&self.terminal_weights, state)
    }
}

/// Clamped integration `a_t = clamp(a_{t-1} + dt·d_t)` from `a_{-1} = base`.
pub fn integrate_actions(base: &[f64], derivatives: &[f64], dt: f64, bounds: &ActionBounds, out: &mut [f64]) {
    let n_u = base.len();
    let mut prev: &[f64] = base;
    let mut tmp = vec![0.0; n_u];
    for (t, d) in derivatives.chunks_exact(n_u).enumerate() {
        for c in 0..n_u {
            tmp[c] = bounds.clamp_channel(c, prev[c] + dt * d[c]);
        }
        out[t * n_u..(t + 1) * n_u].copy_from_slice(&tmp);
        prev = &out[t * n_u..(t + 1) * n_u];
    }
}

/// Nominal derivative/action sequences plus the state trajectory they
/// produce under the model.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedPlan {
    pub base_action: Vec<f64>,
    pub dt: f64,
    pub bounds: ActionBounds,
    derivative_seq: Sequence,
    action_seq: Sequence,
    nominal_states: Sequence,
    cost: f64,
}

impl LiftedPlan {
    /// Plan with the given derivatives; actions are integrated, states unset.
    pub fn from_derivatives(base_action: Vec<f64>, derivative_seq: Sequence, dt: f64, bounds: ActionBounds) -> Self {
        let mut action_seq = Sequence::zeros(derivative_seq.len(), base_action.len());
        integrate_actions(&base_action, derivative_seq.as_slice(), dt, &bounds, action_seq.as_mut_slice());
        LiftedPlan {
            base_action,
            dt,
            bounds,
            derivative_seq,
            action_seq,
            nominal_states: Sequence::default(),
            cost: f64::NAN,
        }
    }

    /// Zero derivatives, i.e. hold `base_action` over the horizon.
    pub fn hold(config: &MppiConfig, base_action: Vec<f64>) -> Self {
        let mut base = base_action;
        config.bounds.clamp(&mut base);
        Self::from_derivatives(base, Sequence::zeros(config.horizon, config.n_u()), config.dt, config.bounds.clone())
    }

    pub fn horizon(&self) -> usize {
        self.derivative_seq.len()
    }

    pub fn n_u(&self) -> usize {
        self.base_action.len()
    }

    pub fn derivative_seq(&self) -> &Sequence {
        &self.derivative_seq
    }

    pub fn action_seq(&self) -> &Sequence {
        &self.action_seq
    }

    /// `T + 1` predicted states, empty until the plan has been rolled out.
    pub fn nominal_states(&self) -> &Sequence {
        &self.nominal_states
    }

    /// Noiseless cost of the plan, NaN until evaluated.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn action(&self, t: usize) -> &[f64] {
        self.action_seq.row(t)
    }

    /// Re-derives the action sequence from base action and derivatives.
    pub fn integrated_actions(&self) -> Sequence {
        let mut out = Sequence::zeros(self.horizon(), self.n_u());
        integrate_actions(&self.base_action, self.derivative_seq.as_slice(), self.dt, &self.bounds, out.as_mut_slice());
        out
    }

    /// Receding-horizon warm start: drop step 0, append a zero derivative,
    /// advance the base action to the old first action.
    pub fn shift(&self) -> LiftedPlan {
        let t = self.horizon();
        let n_u = self.n_u();
        let mut d = Sequence::zeros(t, n_u);
        if t > 1 {
            d.as_mut_slice()[..(t - 1) * n_u].copy_from_slice(&self.derivative_seq.as_slice()[n_u..]);
        }
        let base = if t > 0 { self.action_seq.row(0).to_vec() } else { self.base_action.clone() };
        let mut shifted = LiftedPlan::from_derivatives(base, d, self.dt, self.bounds.clone());
        if self.nominal_states.len() > 1 {
            let nx = self.nominal_states.width();
            let mut s = Sequence::zeros(self.nominal_states.len(), nx);
            let src = self.nominal_states.as_slice();
            s.as_mut_slice()[..src.len() - nx].copy_from_slice(&src[nx..]);
            let last = self.nominal_states.len() - 1;
            s.row_mut(last).copy_from_slice(self.nominal_states.row(last));
            shifted.nominal_states = s;
        }
        shifted
    }
}

/// Where a plan starts: the measured state and its history window.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanStart {
    pub state: Vec<f64>,
    pub history: HistoryWindow,
}

/// `K × T × n_u` perturbations of the derivative sequence, sample-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbations {
    samples: usize,
    horizon: usize,
    n_u: usize,
    data: Vec<f64>,
}

impl Perturbations {
    pub fn zeros(samples: usize, horizon: usize, n_u: usize) -> Self {
        Perturbations { samples, horizon, n_u, data: vec![0.0; samples * horizon * n_u] }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        let n = self.horizon * self.n_u;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn sample_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.horizon * self.n_u;
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Draws `K` perturbations. Sample 0 is always the zero perturbation so the
/// incumbent plan is re-evaluated every iteration.
///
/// In [`ControlSpace::Action`] the noise is white in action space and is
/// returned converted to derivative space, `(η_t − η_{t-1}) / dt`.
pub fn sample_perturbations(config: &MppiConfig, rng: &mut ChaCha8Rng) -> Perturbations {
    let (k, t, n_u) = (config.samples, config.horizon, config.n_u());
    let mut p = Perturbations::zeros(k, t, n_u);
    for s in 1..k {
        let eps = p.sample_mut(s);
        match config.control_space {
            ControlSpace::Derivative => {
                for step in 0..t {
                    for c in 0..n_u {
                        let z: f64 = StandardNormal.sample(rng);
                        eps[step * n_u + c] = config.noise_std[c] * z;
                    }
                }
            }
            ControlSpace::Action => {
                let mut prev = vec![0.0; n_u];
                for step in 0..t {
                    for c in 0..n_u {
                        let z: f64 = StandardNormal.sample(rng);
                        let eta = config.action_noise_std[c] * z;
                        eps[step * n_u + c] = (eta - prev[c]) / config.dt;
                        prev[c] = eta;
                    }
                }
            }
        }
    }
    p
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    /// Total cost, `+∞` if the rollout diverged.
    pub cost: f64,
    pub diverged: bool,
    /// Realized (clamped) actions, `T × n_u`, when requested.
    pub actions: Option<Sequence>,
    /// Visited states, `(T + 1) × n_x`, when requested.
    pub states: Option<Sequence>,
}

fn check_rollout_inputs(
    model: &DynamicsModel,
    start: &PlanStart,
    plan: &LiftedPlan,
    config: &MppiConfig,
) -> Result<(), PlanError> {
    if plan.horizon() != config.horizon {
        return Err(PlanError::Mismatch(format!(
            "plan horizon {} but config horizon {}",
            plan.horizon(),
            config.horizon
        )));
    }
    if plan.n_u() != model.n_u() || config.n_u() != model.n_u() {
        return Err(PlanError::Mismatch("action dimension differs from model".into()));
    }
    model.check_dims(&start.state, plan.base_action.as_slice(), &start.history)?;
    Ok(())
}

/// Rolls out `count` samples starting at `first` jointly through the model.
/// Each sample is evaluated column-wise, so the result for a sample does not
/// depend on which batch it was evaluated in.
#[allow(clippy::too_many_arguments)]
fn rollout_chunk(
    model: &DynamicsModel,
    start: &PlanStart,
    plan: &LiftedPlan,
    perturbations: Option<&Perturbations>,
    first: usize,
    count: usize,
    config: &MppiConfig,
    cost: &dyn TaskCost,
    keep: bool,
) -> Vec<RolloutResult> {
    let (t_len, n_u, n_x) = (config.horizon, config.n_u(), model.n_x());
    let nin = model.input_dim();
    let dt = config.dt;

    // realized actions per sample
    let mut actions = vec![0.0; count * t_len * n_u];
    let mut derivs = plan.derivative_seq.as_slice().to_vec();
    for s in 0..count {
        if let Some(p) = perturbations {
            let eps = p.sample(first + s);
            for (d, (base, e)) in derivs.iter_mut().zip(plan.derivative_seq.as_slice().iter().zip(eps)) {
                *d = base + e;
            }
        }
        integrate_actions(
            &plan.base_action,
            &derivs,
            dt,
            &config.bounds,
            &mut actions[s * t_len * n_u..(s + 1) * t_len * n_u],
        );
    }

    let mut states = vec![0.0; count * n_x];
    for s in 0..count {
        states[s * n_x..(s + 1) * n_x].copy_from_slice(&start.state);
    }
    let mut hist: Vec<HistoryWindow> = vec![start.history.clone(); count];
    let mut total = vec![0.0; count];
    let mut diverged = vec![false; count];
    let mut trajs: Vec<Sequence> =
        if keep { (0..count).map(|_| Sequence::from_rows(n_x, start.state.clone())).collect() } else { Vec::new() };

    let mut ws = Workspace::new();
    let mut col = vec![0.0; nin];
    let mut batch_in = vec![0.0; nin * count];
    let mut inc = vec![0.0; n_x * count];
    let mut next = vec![0.0; n_x];
    let mut inc_s = vec![0.0; n_x];

    for t in 0..t_len {
        for s in 0..count {
            let a = &actions[(s * t_len + t) * n_u..(s * t_len + t + 1) * n_u];
            let x = &states[s * n_x..(s + 1) * n_x];
            if !diverged[s] {
                let prev = if t == 0 {
                    plan.base_action.as_slice()
                } else {
                    &actions[(s * t_len + t - 1) * n_u..(s * t_len + t) * n_u]
                };
                let mut c = cost.running(t, x, a);
                for ch in 0..n_u {
                    let rate = (a[ch] - prev[ch]) / dt;
                    c += config.action_weight[ch] * a[ch] * a[ch] + config.derivative_weight[ch] * rate * rate;
                }
                total[s] += c;
            }
            model.normalized_input(x, a, &hist[s], &mut col);
            for (j, v) in col.iter().enumerate() {
                batch_in[j * count + s] = *v;
            }
        }
        model.increment_batch(&batch_in, count, &mut ws, &mut inc);
        for s in 0..count {
            for i in 0..n_x {
                inc_s[i] = inc[i * count + s];
            }
            let a = &actions[(s * t_len + t) * n_u..(s * t_len + t + 1) * n_u];
            let x = &mut states[s * n_x..(s + 1) * n_x];
            model.apply_increment(x, &inc_s, &mut next);
            hist[s].push_unchecked(x, a);
            if diverged[s] || next.iter().any(|v| !v.is_finite()) || !total[s].is_finite() {
                diverged[s] = true;
                x.fill(0.0);
            } else {
                x.copy_from_slice(&next);
            }
            if keep {
                trajs[s].push_row(x);
            }
        }
    }
    (0..count)
        .map(|s| {
            let mut c = total[s];
            if !diverged[s] {
                c += cost.terminal(&states[s * n_x..(s + 1) * n_x]);
            }
            let bad = diverged[s] || !c.is_finite();
            RolloutResult {
                cost: if bad { f64::INFINITY } else { c },
                diverged: bad,
                actions: keep
                    .then(|| Sequence::from_rows(n_u, actions[s * t_len * n_u..(s + 1) * t_len * n_u].to_vec())),
                states: keep.then(|| std::mem::take(&mut trajs[s])),
            }
        })
        .collect()
}

/// Rolls out one (optionally perturbed) derivative sequence and returns its
/// cost, realized actions and visited states. Never mutates the plan or the
/// start history.
pub fn rollout(
    model: &DynamicsModel,
    start: &PlanStart,
    plan: &LiftedPlan,
    perturbation: Option<&[f64]>,
    config: &MppiConfig,
    cost: &dyn TaskCost,
) -> Result<RolloutResult, PlanError> {
    check_rollout_inputs(model, start, plan, config)?;
    let pert = perturbation.map(|p| {
        let mut one = Perturbations::zeros(1, config.horizon, config.n_u());
        one.sample_mut(0).copy_from_slice(p);
        one
    });
    Ok(rollout_chunk(model, start, plan, pert.as_ref(), 0, 1, config, cost, true).pop().expect("one rollout"))
}

const CHUNK: usize = 64;

/// Costs of every perturbed rollout, in sample order.
pub fn rollout_costs(
    model: &DynamicsModel,
    start: &PlanStart,
    plan: &LiftedPlan,
    perturbations: &Perturbations,
    config: &MppiConfig,
    cost: &dyn TaskCost,
) -> Result<Vec<f64>, PlanError> {
    check_rollout_inputs(model, start, plan, config)?;
    let k = perturbations.samples();
    let chunks: Vec<usize> = (0..k).step_by(CHUNK).collect();
    let parts: Vec<Vec<RolloutResult>> = chunks
        .par_iter()
        .map(|&first| {
            let count = CHUNK.min(k - first);
            rollout_chunk(model, start, plan, Some(perturbations), first, count, config, cost, false)
        })
        .collect();
    Ok(parts.into_iter().flatten().map(|r| r.cost).collect())
}

/// Information-theoretic weights `exp(−(S_k − ρ)/λ) / η` with `ρ = min S`.
/// Infinite costs get weight zero.
pub fn softmax_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>, PlanError> {
    let rho = costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    if !rho.is_finite() {
        return Err(PlanError::AllDiverged);
    }
    let mut w: Vec<f64> =
        costs.iter().map(|&c| if c.is_finite() { (-(c - rho) / temperature).exp() } else { 0.0 }).collect();
    let eta: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= eta;
    }
    Ok(w)
}

/// `Σ_k w_k ε_k`, reduced sequentially in sample order.
pub fn weighted_update(costs: &[f64], perturbations: &Perturbations, temperature: f64) -> Result<Sequence, PlanError> {
    if costs.len() != perturbations.samples() {
        return Err(PlanError::Mismatch(format!(
            "{} costs for {} perturbations",
            costs.len(),
            perturbations.samples()
        )));
    }
    let w = softmax_weights(costs, temperature)?;
    let mut update = Sequence::zeros(perturbations.horizon, perturbations.n_u);
    for (k, &wk) in w.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        for (u, e) in update.as_mut_slice().iter_mut().zip(perturbations.sample(k)) {
            *u += wk * e;
        }
    }
    Ok(update)
}

/// Evaluates a plan noiselessly and stores its states and cost.
pub fn evaluate_plan(
    model: &DynamicsModel,
    start: &PlanStart,
    mut plan: LiftedPlan,
    config: &MppiConfig,
    cost: &dyn TaskCost,
) -> Result<LiftedPlan, PlanError> {
    let r = rollout(model, start, &plan, None, config, cost)?;
    plan.nominal_states = r.states.expect("states kept");
    plan.cost = r.cost;
    Ok(plan)
}

/// One Smooth-MPPI iteration with an explicit random stream.
pub fn plan_with_rng(
    model: &DynamicsModel,
    start: &PlanStart,
    incumbent: &LiftedPlan,
    config: &MppiConfig,
    cost: &dyn TaskCost,
    rng: &mut ChaCha8Rng,
) -> Result<LiftedPlan, PlanError> {
    config.validate()?;
    let eps = sample_perturbations(config, rng);
    let costs = rollout_costs(model, start, incumbent, &eps, config, cost)?;
    let update = weighted_update(&costs, &eps, config.temperature)?;
    let mut d = incumbent.derivative_seq.clone();
    for (v, u) in d.as_mut_slice().iter_mut().zip(update.as_slice()) {
        *v += u;
    }
    let next = LiftedPlan::from_derivatives(incumbent.base_action.clone(), d, config.dt, config.bounds.clone());
    evaluate_plan(model, start, next, config, cost)
}

/// Stateful planner owning its random stream, seeded from the config.
#[derive(Clone, Debug)]
pub struct Smppi {
    config: MppiConfig,
    rng: ChaCha8Rng,
}

impl Smppi {
    pub fn new(config: MppiConfig) -> Result<Self, PlanError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Smppi { config, rng })
    }

    pub fn config(&self) -> &MppiConfig {
        &self.config
    }

    pub fn initial_plan(&self, base_action: Vec<f64>) -> LiftedPlan {
        LiftedPlan::hold(&self.config, base_action)
    }

    pub fn plan(
        &mut self,
        model: &DynamicsModel,
        start: &PlanStart,
        incumbent: &LiftedPlan,
        cost: &dyn TaskCost,
    ) -> Result<LiftedPlan, PlanError> {
        plan_with_rng(model, start, incumbent, &self.config, cost, &mut self.rng)
    }
}
