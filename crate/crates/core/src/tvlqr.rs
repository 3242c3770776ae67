//! Time-varying LQR tracking around a planned trajectory, synthesized from
//! the Jacobians of the same network the planner rolls out.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::nn_dynamics::{DynamicsModel, FeatureKind, HistoryWindow, ModelError};
use crate::smppi::LiftedPlan;
use crate::types::ActionBounds;

#[derive(Debug, Error)]
pub enum LqrError {
    #[error("R + BᵀPB is not positive definite at step {step}")]
    Singular { step: usize },
    #[error("invalid tracking cost: {0}")]
    Cost(String),
    #[error("non-finite linearization at step {step}")]
    NonFinite { step: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("time index {index} outside schedule of length {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("time offset {offset} outside [0, {span})")]
    OffsetOutOfRange { offset: f64, span: f64 },
    #[error("plan has no nominal states; evaluate it first")]
    MissingNominal,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Jacobians along a nominal trajectory, either over the plain state `x_t`
/// or over the history-augmented state `z_t`.
#[derive(Clone, Debug)]
pub struct LinearizationSeq {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub augmented: bool,
    /// `T + 1` nominal points in the linearization coordinates.
    pub nominal: Vec<DVector<f64>>,
    /// `T` nominal actions.
    pub actions: Vec<DVector<f64>>,
    /// Coordinate kinds of the linearization state (angles get wrapped).
    pub coords: Vec<FeatureKind>,
    pub dt: f64,
}

impl LinearizationSeq {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.coords.len()
    }
}

/// Linearizes the model at every knot of `plan`, rolling the history window
/// forward along the nominal trajectory itself.
pub fn linearize_along(
    model: &DynamicsModel,
    plan: &LiftedPlan,
    start_history: &HistoryWindow,
    augmented: bool,
) -> Result<LinearizationSeq, LqrError> {
    let t_len = plan.horizon();
    let states = plan.nominal_states();
    if states.len() != t_len + 1 {
        return Err(LqrError::MissingNominal);
    }
    if augmented && model.history_len() == 0 {
        return Err(ModelError::NoHistory.into());
    }
    let mut hist = start_history.clone();
    let mut seq = LinearizationSeq {
        a: Vec::with_capacity(t_len),
        b: Vec::with_capacity(t_len),
        augmented,
        nominal: Vec::with_capacity(t_len + 1),
        actions: Vec::with_capacity(t_len),
        coords: if augmented { model.augmented_features() } else { model.shape().state_features.clone() },
        dt: plan.dt,
    };
    for t in 0..=t_len {
        let x = states.row(t);
        seq.nominal.push(if augmented {
            DVector::from_vec(model.augmented_state(x, &hist))
        } else {
            DVector::from_row_slice(x)
        });
        if t == t_len {
            break;
        }
        let u = plan.action(t);
        let (a, b) = if augmented { model.augmented_jacobian(x, u, &hist)? } else { model.jacobians(x, u, &hist)? };
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(LqrError::NonFinite { step: t });
        }
        seq.a.push(a);
        seq.b.push(b);
        seq.actions.push(DVector::from_row_slice(u));
        hist.push(x, u)?;
    }
    Ok(seq)
}

/// Quadratic tracking weights on state and action deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_final: DMatrix<f64>,
}

impl TrackingCost {
    /// Diagonal weights on the current-state block of an `n_z`-dimensional
    /// linearization state; history blocks get zero weight.
    pub fn from_diagonals(q: &[f64], r: &[f64], q_final: &[f64], n_z: usize) -> Self {
        let embed = |d: &[f64]| {
            let mut m = DMatrix::zeros(n_z, n_z);
            for (i, v) in d.iter().enumerate() {
                m[(i, i)] = *v;
            }
            m
        };
        TrackingCost { q: embed(q), r: DMatrix::from_diagonal(&DVector::from_row_slice(r)), q_final: embed(q_final) }
    }

    pub fn validate(&self, n_z: usize, n_u: usize) -> Result<(), LqrError> {
        for (name, m, n) in [("Q", &self.q, n_z), ("Q_f", &self.q_final, n_z), ("R", &self.r, n_u)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(LqrError::Dimension(format!("{name} must be {n}×{n}")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(LqrError::Cost(format!("{name} has non-finite entries")));
            }
            if (m - m.transpose()).amax() > 1e-12 {
                return Err(LqrError::Cost(format!("{name} is not symmetric")));
            }
        }
        let min_eig = |m: &DMatrix<f64>| m.clone().symmetric_eigenvalues().min();
        if min_eig(&self.r) <= 0.0 {
            return Err(LqrError::Cost("R must be positive definite".into()));
        }
        if min_eig(&self.q) < -1e-12 || min_eig(&self.q_final) < -1e-12 {
            return Err(LqrError::Cost("Q and Q_f must be positive semidefinite".into()));
        }
        Ok(())
    }
}

/// Gain, nominal state and nominal action at one instant.
pub type KnotPoint = (DMatrix<f64>, DVector<f64>, DVector<f64>);

/// Feedback gains paired with the nominal trajectory they stabilize.
#[derive(Clone, Debug)]
pub struct GainSchedule {
    pub gains: Vec<DMatrix<f64>>,
    /// Cost-to-go matrices `P_0 … P_T`.
    pub values: Vec<DMatrix<f64>>,
    pub nominal: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub coords: Vec<FeatureKind>,
    pub augmented: bool,
    pub dt: f64,
    pub bounds: Option<ActionBounds>,
    /// Fast-loop step at which the underlying plan was made.
    pub valid_from: usize,
}

/// Backward Riccati recursion
/// `K_t = (R + BᵀP B)⁻¹ BᵀP A`, `P_t = Q + AᵀP (A − B K_t)`, `P_T = Q_f`,
/// symmetrizing `P` at every step.
pub fn riccati_backward(lin: &LinearizationSeq, cost: &TrackingCost) -> Result<GainSchedule, LqrError> {
    let t_len = lin.len();
    let n_z = lin.state_dim();
    let n_u = lin.b.first().map_or(cost.r.nrows(), |b| b.ncols());
    cost.validate(n_z, n_u)?;
    let mut p = cost.q_final.clone();
    let mut gains = vec![DMatrix::zeros(n_u, n_z); t_len];
    let mut values = vec![DMatrix::zeros(n_z, n_z); t_len + 1];
    values[t_len] = p.clone();
    for t in (0..t_len).rev() {
        let (a, b) = (&lin.a[t], &lin.b[t]);
        if a.shape() != (n_z, n_z) || b.shape() != (n_z, n_u) {
            return Err(LqrError::Dimension(format!("step {t}: A or B has the wrong shape")));
        }
        let bt_p = b.transpose() * &p;
        let s = &cost.r + &bt_p * b;
        let s = (&s + s.transpose()) * 0.5;
        let chol = s.cholesky().ok_or(LqrError::Singular { step: t })?;
        let k = chol.solve(&(&bt_p * a));
        if k.iter().any(|v| !v.is_finite()) {
            return Err(LqrError::Singular { step: t });
        }
        let closed = a - b * &k;
        let next = &cost.q + a.transpose() * &p * closed;
        p = (&next + next.transpose()) * 0.5;
        gains[t] = k;
        values[t] = p.clone();
    }
    Ok(GainSchedule {
        gains,
        values,
        nominal: lin.nominal.clone(),
        actions: lin.actions.clone(),
        coords: lin.coords.clone(),
        augmented: lin.augmented,
        dt: lin.dt,
        bounds: None,
        valid_from: 0,
    })
}

impl GainSchedule {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn with_bounds(mut self, bounds: ActionBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn valid_from(mut self, step: usize) -> Self {
        self.valid_from = step;
        self
    }

    /// `K · (measured ⊖ nominal)` with angle coordinates wrapped.
    pub fn correction(
        &self,
        gain: &DMatrix<f64>,
        nominal: &DVector<f64>,
        measured: &[f64],
    ) -> Result<Vec<f64>, LqrError> {
        if measured.len() != self.coords.len() || nominal.len() != self.coords.len() {
            return Err(LqrError::Dimension(format!(
                "measured state has {} entries, schedule expects {}",
                measured.len(),
                self.coords.len()
            )));
        }
        let dev = DVector::from_iterator(
            measured.len(),
            measured.iter().zip(nominal.iter()).zip(&self.coords).map(|((m, n), k)| {
                let d = m - n;
                if *k == FeatureKind::Angle {
                    crate::nn_dynamics::wrap_angle(d)
                } else {
                    d
                }
            }),
        );
        Ok((gain * dev).iter().copied().collect())
    }

    /// Feedforward minus gain times the (angle-wrapped) deviation, clamped.
    pub fn feedback_with(
        &self,
        gain: &DMatrix<f64>,
        nominal: &DVector<f64>,
        measured: &[f64],
        feedforward: &[f64],
    ) -> Result<Vec<f64>, LqrError> {
        if feedforward.len() != gain.nrows() {
            return Err(LqrError::Dimension("feedforward length differs from gain rows".into()));
        }
        let corr = self.correction(gain, nominal, measured)?;
        let mut u: Vec<f64> = feedforward.iter().zip(corr.iter()).map(|(f, c)| f - c).collect();
        if let Some(b) = &self.bounds {
            b.clamp(&mut u);
        }
        Ok(u)
    }

    /// `clamp(u_ff − K_t (measured − nominal_t))` at knot `t`.
    pub fn feedback_action(&self, t: usize, measured: &[f64], feedforward: &[f64]) -> Result<Vec<f64>, LqrError> {
        if t >= self.len() {
            return Err(LqrError::OutOfRange { index: t, len: self.len() });
        }
        self.feedback_with(&self.gains[t], &self.nominal[t], measured, feedforward)
    }

    /// Gain, nominal state and nominal action at `alpha ∈ [0, 1)` of the way
    /// from knot `t` to knot `t + 1`. Gains are held; states (along the
    /// shorter arc for angles) and actions are interpolated linearly, and the
    /// last action is held past the final knot.
    pub fn interpolate_at(&self, t: usize, alpha: f64) -> Result<KnotPoint, LqrError> {
        if t >= self.len() {
            return Err(LqrError::OutOfRange { index: t, len: self.len() });
        }
        let x = DVector::from_vec(lerp_coords(
            &self.coords,
            self.nominal[t].as_slice(),
            self.nominal[t + 1].as_slice(),
            alpha,
        ));
        let u = if t + 1 < self.actions.len() && alpha != 0.0 {
            &self.actions[t] * (1.0 - alpha) + &self.actions[t + 1] * alpha
        } else {
            self.actions[t].clone()
        };
        Ok((self.gains[t].clone(), x, u))
    }

    /// [`interpolate_at`](Self::interpolate_at) addressed by a time offset in
    /// seconds from the first knot. Offsets within 1e-9·dt of a knot snap to it.
    pub fn interpolate_gain(&self, offset: f64) -> Result<KnotPoint, LqrError> {
        let span = self.len() as f64 * self.dt;
        if !(offset >= 0.0 && offset < span) {
            return Err(LqrError::OffsetOutOfRange { offset, span });
        }
        let pos = offset / self.dt;
        let mut t = pos.floor();
        let mut alpha = pos - t;
        if alpha > 1.0 - 1e-9 {
            t += 1.0;
            alpha = 0.0;
        } else if alpha < 1e-9 {
            alpha = 0.0;
        }
        let t = (t as usize).min(self.len() - 1);
        self.interpolate_at(t, alpha)
    }
}

/// `a + alpha·(b − a)` per coordinate, wrapping angle coordinates.
/// `alpha = 0` returns `a` exactly.
pub fn lerp_coords(coords: &[FeatureKind], a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    if alpha == 0.0 {
        return a.to_vec();
    }
    coords
        .iter()
        .zip(a.iter().zip(b))
        .map(|(k, (a, b))| {
            if *k == FeatureKind::Angle {
                crate::nn_dynamics::wrap_angle(a + alpha * crate::nn_dynamics::wrap_angle(b - a))
            } else {
                a + alpha * (b - a)
            }
        })
        .collect()
}

/// Measured augmented state at fraction `alpha` through a knot interval.
///
/// The current block is the live state; the history blocks interpolate
/// between the window at the knot and the window after pushing
/// `(knot_state, knot_action)`, mirroring how nominal points are interpolated.
pub fn augmented_measurement(
    model: &DynamicsModel,
    current: &[f64],
    knot_history: &HistoryWindow,
    knot_state: &[f64],
    knot_action: &[f64],
    alpha: f64,
) -> Result<Vec<f64>, LqrError> {
    let z0 = model.augmented_state(knot_state, knot_history);
    let mut next = knot_history.clone();
    next.push(knot_state, knot_action)?;
    let z1 = model.augmented_state(knot_state, &next);
    let mut z = lerp_coords(&model.augmented_features(), &z0, &z1, alpha);
    z[..model.n_x()].copy_from_slice(current);
    Ok(z)
}
