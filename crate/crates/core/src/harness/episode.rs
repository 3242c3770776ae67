use anyhow::{Context, Result};
use std::time::Instant;

use super::config::{ExperimentConfig, Mode, TaskSection};
use crate::environments::{combined_effect, EnvSpec, EpisodeLog, PathCost, StepRecord, Track};
use crate::nn_dynamics::{state_difference, DynamicsModel, FeatureKind};
use crate::smppi::{LiftedPlan, PlanError, PlanStart, QuadraticCost, Smppi, TaskCost};
use crate::tvlqr::{augmented_measurement, lerp_coords, linearize_along, riccati_backward, GainSchedule, TrackingCost};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-episode metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mode: Mode,
    pub seed: u64,
    pub fast_steps: usize,
    pub plans: usize,
    /// RMS of `‖x ⊖ x*‖` against the interpolated nominal, over fast steps.
    pub rms_tracking: f64,
    /// Mean running task cost per fast step.
    pub mean_cost: f64,
    /// Mean `‖u_{k+1} − u_k‖` of the applied action over fast steps.
    pub chattering: f64,
    /// Seconds from the first disturbance onset (or t = 0) until the goal
    /// error enters the band for good; censored at the episode end.
    pub recovery_time: f64,
    /// Largest goal error (lateral path error for the vehicle).
    pub max_deviation: f64,
    pub final_deviation: f64,
    pub max_feedback: f64,
    /// Mean planner plus Riccati wall time per update, in milliseconds.
    pub planner_ms: f64,
    pub failed: Option<String>,
}

impl MetricsReport {
    pub const CSV_COLUMNS: &'static str =
        "mode,seed,fast_steps,plans,rms_tracking,mean_cost,chattering,recovery_time,max_deviation,final_deviation,max_feedback,failed";

    pub fn csv_row(&self) -> String {
        use crate::environments::fmt_f64 as f;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mode.as_str(),
            self.seed,
            self.fast_steps,
            self.plans,
            f(self.rms_tracking),
            f(self.mean_cost),
            f(self.chattering),
            f(self.recovery_time),
            f(self.max_deviation),
            f(self.final_deviation),
            f(self.max_feedback),
            self.failed.is_some() as u8
        )
    }
}

/// Task cost factory plus goal-error measure.
pub(crate) enum Task {
    Regulate(QuadraticCost),
    Path { track: Track, cfg: crate::environments::PathWeights, max_speed: f64 },
}

impl Task {
    pub(crate) fn new(cfg: &ExperimentConfig) -> Self {
        let angles: Vec<bool> = cfg.env_spec().angle_mask();
        match &cfg.task {
            TaskSection::Regulate { goal, weights, terminal_weights, .. } => Task::Regulate(QuadraticCost {
                goal: goal.clone(),
                weights: weights.clone(),
                terminal_weights: terminal_weights.clone(),
                angles,
            }),
            TaskSection::Path { radius, offset, spacing, max_speed, weights, .. } => Task::Path {
                track: Track::figure_eight(*radius, *offset, *spacing),
                cfg: weights.clone(),
                max_speed: *max_speed,
            },
        }
    }

    pub(crate) fn cost<'a>(&'a self, progress: f64, dt: f64, horizon: usize) -> Box<dyn TaskCost + 'a> {
        match self {
            Task::Regulate(q) => Box::new(q.clone()),
            Task::Path { track, cfg, max_speed } => {
                Box::new(PathCost { track, weights: cfg.clone(), progress, dt, max_speed: *max_speed, horizon })
            }
        }
    }

    /// Goal error and the updated progress along the path.
    pub(crate) fn goal_error(&self, x: &[f64], progress: f64) -> (f64, f64) {
        match self {
            Task::Regulate(q) => {
                let e: f64 = x
                    .iter()
                    .zip(&q.goal)
                    .zip(&q.angles)
                    .map(|((v, g), a)| {
                        let d = if *a { crate::nn_dynamics::wrap_angle(v - g) } else { v - g };
                        d * d
                    })
                    .sum();
                (e.sqrt(), progress)
            }
            Task::Path { track, .. } => {
                let p = track.project([x[0], x[1]], progress - 2.0, progress + 5.0);
                (p.lateral.abs(), p.progress)
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Initial state for a seed: the configured state plus a seeded uniform spread.
pub fn initial_state(cfg: &ExperimentConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a17);
    let spec = cfg.env_spec();
    let mut x: Vec<f64> = cfg
        .initial_state
        .iter()
        .zip(&cfg.initial_spread)
        .map(|(v, s)| if *s > 0.0 { v + rng.gen_range(-s..=*s) } else { *v })
        .collect();
    for (v, f) in x.iter_mut().zip(spec.features()) {
        if f == FeatureKind::Angle {
            *v = crate::nn_dynamics::wrap_angle(*v);
        }
    }
    x
}

/// Plan currently driving the fast loop.
struct Active {
    plan: LiftedPlan,
    schedule: Option<GainSchedule>,
    /// Fast step of the plan's first knot.
    knot_step: usize,
}

/// Runs one closed-loop episode in `cfg.mode` with planner seed `seed`.
/// A diverged planner ends the episode early; the partial log is kept and
/// the report is marked failed.
pub fn run_episode(cfg: &ExperimentConfig, model: &DynamicsModel, seed: u64) -> Result<(EpisodeLog, MetricsReport)> {
    cfg.validate()?;
    let spec: EnvSpec = cfg.env_spec();
    anyhow::ensure!(
        model.n_x() == spec.n_x() && model.n_u() == spec.n_u(),
        "model dimensions ({}, {}) do not match environment ({}, {})",
        model.n_x(),
        model.n_u(),
        spec.n_x(),
        spec.n_u()
    );
    anyhow::ensure!(model.shape().state_features == spec.features(), "model feature kinds differ from environment");
    let mode = cfg.mode;
    let n_fast = cfg.n_fast;
    let fast_dt = cfg.fast_dt;
    let total = cfg.fast_steps();
    let mcfg = cfg.mppi_config(seed);
    let mut planner = Smppi::new(mcfg.clone())?;
    let task = Task::new(cfg);
    let features = spec.features();
    let n_u = spec.n_u();
    let tracking = TrackingCost::from_diagonals(
        &cfg.tracking.q,
        &cfg.tracking.r,
        &cfg.tracking.q_final,
        if cfg.tracking.augmented { model.shape().augmented_dim() } else { spec.n_x() },
    );

    let mut log = EpisodeLog::new(&spec, mode.as_str(), seed, &cfg.hash());
    let mut x = initial_state(cfg, seed);
    let mut hist = model.new_history();
    let mut knot_state = x.clone();
    let mut knot_hist = hist.clone();
    let mut interval_sum = vec![0.0; n_u];
    let mut interval_first: Option<Vec<f64>> = None;
    let mut interval_uniform = true;
    let mut active: Option<Active> = None;
    let mut pending: Option<Active> = None;
    let mut incumbent: Option<LiftedPlan> = None;
    let mut progress = 0.0;
    if let Task::Path { track, .. } = &task {
        progress = track.project([x[0], x[1]], -5.0, 5.0).progress;
    }

    let onset = cfg.disturbances.iter().map(|d| d.t_start).fold(f64::INFINITY, f64::min);
    let onset = if onset.is_finite() { onset } else { 0.0 };
    let mut settled_since: Option<f64> = None;

    let (mut sq_track, mut sum_cost, mut sum_chat, mut max_dev, mut max_fb) = (0.0, 0.0, 0.0, 0.0f64, 0.0f64);
    let mut final_dev = 0.0;
    let mut prev_u: Option<Vec<f64>> = None;
    let mut plans = 0;
    let mut plan_time = 0.0;
    let mut steps_done = 0;
    let mut err_tmp = vec![0.0; spec.n_x()];

    for k in 0..total {
        let t = k as f64 * fast_dt;
        let is_knot = k % n_fast == 0;
        if let Some(p) = pending.take() {
            active = Some(p);
        }
        if is_knot {
            if k > 0 {
                // history advances by the state at the previous knot and the
                // action actually applied over the interval
                let avg: Vec<f64> = if interval_uniform {
                    interval_first.clone().expect("interval has steps")
                } else {
                    interval_sum.iter().map(|s| s / n_fast as f64).collect()
                };
                hist.push(&knot_state, &avg)?;
            }
            knot_state = x.clone();
            knot_hist = hist.clone();
            interval_sum.iter_mut().for_each(|v| *v = 0.0);
            interval_first = None;
            interval_uniform = true;

            let clock = Instant::now();
            let start = PlanStart { state: x.clone(), history: hist.clone() };
            let cost = task.cost(progress, mcfg.dt, mcfg.horizon);
            let mut plan = match incumbent.take() {
                Some(p) => p.shift(),
                None => planner.initial_plan(vec![0.0; n_u]),
            };
            let iters = cfg.planner.iterations + if k == 0 { cfg.planner.warmup_iterations } else { 0 };
            let mut failure = None;
            for _ in 0..iters {
                match planner.plan(model, &start, &plan, cost.as_ref()) {
                    Ok(p) => plan = p,
                    Err(PlanError::AllDiverged) => {
                        failure = Some(format!("planner diverged at t = {t}"));
                        break;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            if let Some(f) = failure {
                log.failed = Some(f);
                break;
            }
            let schedule = if mode == Mode::Toast {
                let lin = linearize_along(model, &plan, &hist, cfg.tracking.augmented)
                    .with_context(|| format!("linearizing at t = {t}"))?;
                Some(
                    riccati_backward(&lin, &tracking)
                        .with_context(|| format!("Riccati pass at t = {t}"))?
                        .with_bounds(spec.bounds.clone())
                        .valid_from(k),
                )
            } else {
                None
            };
            plan_time += clock.elapsed().as_secs_f64();
            plans += 1;
            incumbent = Some(plan.clone());
            let fresh = Active { plan, schedule, knot_step: k };
            if cfg.compute_delay && active.is_some() {
                pending = Some(fresh);
            } else {
                active = Some(fresh);
            }
        }

        let act = active.as_ref().expect("a plan is active");
        let offset = k - act.knot_step;
        let j = (offset / n_fast).min(act.plan.horizon() - 1);
        let alpha = (offset % n_fast) as f64 / n_fast as f64;
        let ff = act.plan.action(j).to_vec();
        let noms = act.plan.nominal_states();
        let x_nom = lerp_coords(&features, noms.row(j), noms.row(j + 1), alpha);
        state_difference(&features, &x, &x_nom, &mut err_tmp);
        let tracking_error = norm(&err_tmp);

        let fb: Vec<f64> = match (&act.schedule, mode) {
            (Some(s), Mode::Toast) => {
                let (gain, z_nom, _) = s.interpolate_at(j, alpha)?;
                let measured = if s.augmented {
                    augmented_measurement(model, &x, &knot_hist, &knot_state, &ff, alpha)?
                } else {
                    x.clone()
                };
                s.correction(&gain, &z_nom, &measured)?.iter().map(|c| -c).collect()
            }
            _ => vec![0.0; n_u],
        };
        let requested: Vec<f64> = ff.iter().zip(&fb).map(|(a, b)| a + b).collect();
        let effect = combined_effect(&cfg.disturbances, t, n_u);
        let cost_now = task.cost(progress, mcfg.dt, mcfg.horizon).running(0, &x, &requested);
        let (next, applied) = spec.step(&x, &requested, &effect).with_context(|| format!("simulating t = {t}"))?;

        let friction = match &spec.physics {
            crate::environments::Physics::Vehicle(p) => Some(effect.friction.unwrap_or(p.friction)),
            _ => None,
        };
        if mode != Mode::MppiOnly || is_knot {
            log.push(StepRecord {
                time: t,
                state: x.clone(),
                action: applied.clone(),
                feedforward: ff.clone(),
                feedback: fb.clone(),
                clamped: applied != requested,
                disturbance: effect.additive.clone(),
                friction,
                cost: cost_now,
                tracking_error,
                replanned: is_knot,
            });
        }

        sq_track += tracking_error * tracking_error;
        sum_cost += cost_now;
        max_fb = max_fb.max(norm(&fb));
        if let Some(p) = &prev_u {
            let d: Vec<f64> = applied.iter().zip(p).map(|(a, b)| a - b).collect();
            sum_chat += norm(&d);
        }
        for (s, a) in interval_sum.iter_mut().zip(&applied) {
            *s += a;
        }
        match &interval_first {
            None => interval_first = Some(applied.clone()),
            Some(f) if *f != applied => interval_uniform = false,
            _ => {}
        }
        prev_u = Some(applied);
        x = next;
        steps_done += 1;

        let (dev, prog) = task.goal_error(&x, progress);
        progress = prog;
        max_dev = max_dev.max(dev);
        final_dev = dev;
        let t_next = (k + 1) as f64 * fast_dt;
        if t_next >= onset {
            if dev <= cfg.band() {
                settled_since.get_or_insert(t_next);
            } else {
                settled_since = None;
            }
        }
    }

    let n = steps_done.max(1) as f64;
    let end = total as f64 * fast_dt;
    let recovery_time =
        if log.failed.is_some() { end - onset } else { settled_since.map_or(end - onset, |s| (s - onset).max(0.0)) };
    let report = MetricsReport {
        mode,
        seed,
        fast_steps: steps_done,
        plans,
        rms_tracking: (sq_track / n).sqrt(),
        mean_cost: sum_cost / n,
        chattering: if steps_done > 1 { sum_chat / (steps_done - 1) as f64 } else { 0.0 },
        recovery_time,
        max_deviation: max_dev,
        final_deviation: final_dev,
        max_feedback: max_fb,
        planner_ms: 1e3 * plan_time / plans.max(1) as f64,
        failed: log.failed.clone(),
    };
    Ok((log, report))
}
