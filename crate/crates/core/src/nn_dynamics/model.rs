use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{encode_state, feature_width, wrap_angle, FeatureKind};
use super::mlp::{self, Dense, Workspace};
use super::{HistoryWindow, ModelError};

/// Architecture of a dynamics model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_x: usize,
    pub n_u: usize,
    pub history_len: usize,
    pub state_features: Vec<FeatureKind>,
    pub hidden: Vec<usize>,
}

impl ModelShape {
    pub fn feature_width(&self) -> usize {
        feature_width(&self.state_features)
    }

    /// `(f + n_u)·(H + 1)` where `f` is the encoded width of one state.
    pub fn input_dim(&self) -> usize {
        (self.feature_width() + self.n_u) * (self.history_len + 1)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(&self.hidden);
        s.push(self.n_x);
        s
    }

    /// Dimension of the history-augmented state `z_t`.
    pub fn augmented_dim(&self) -> usize {
        self.n_x * (self.history_len + 1) + self.n_u * self.history_len
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_x == 0 || self.n_u == 0 {
            return Err(ModelError::Invalid("state and action dimensions must be positive".into()));
        }
        if self.state_features.len() != self.n_x {
            return Err(ModelError::dim("state feature kinds", self.n_x, self.state_features.len()));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::Invalid("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Per-feature affine normalization `(v − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n: usize) -> Self {
        Normalizer { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    /// Mean and population standard deviation of `rows`; a (near-)constant
    /// feature gets std 1.
    pub fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            n += 1;
            for j in 0..dim {
                let d = row[j] - mean[j];
                mean[j] += d / n as f64;
                m2[j] += d * (row[j] - mean[j]);
            }
        }
        let std = m2
            .iter()
            .map(|&s| {
                let sd = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
                if sd > 1e-8 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    fn validate(&self, what: &'static str, n: usize) -> Result<(), ModelError> {
        if self.mean.len() != n || self.std.len() != n {
            return Err(ModelError::dim(what, n, self.mean.len().min(self.std.len())));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(ModelError::Invalid(format!("{what}: standard deviations must be positive")));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(ModelError::Invalid(format!("{what}: non-finite mean")));
        }
        Ok(())
    }
}

/// The shared learned dynamics `x_{t+1} = x_t + Δ(x_t, u_t, history)`.
///
/// Input layout (before normalization):
/// `[φ(x_t), φ(x_{t-1}), …, φ(x_{t-H}), u_t, u_{t-1}, …, u_{t-H}]`
/// where `φ` is the per-coordinate feature map of [`FeatureKind`].
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    shape: ModelShape,
    layers: Vec<Dense>,
    in_norm: Normalizer,
    out_norm: Normalizer,
}

/// Partial derivatives of the increment with respect to every history slot.
#[derive(Clone, Debug)]
pub(crate) struct SlotPartials {
    /// `∂Δ/∂x_{t-k}` for `k = 0..=H`, each `n_x × n_x`.
    pub states: Vec<DMatrix<f64>>,
    /// `∂Δ/∂u_{t-k}` for `k = 0..=H`, each `n_x × n_u`.
    pub actions: Vec<DMatrix<f64>>,
}

impl DynamicsModel {
    pub fn new(
        shape: ModelShape,
        layers: Vec<Dense>,
        in_norm: Normalizer,
        out_norm: Normalizer,
    ) -> Result<Self, ModelError> {
        shape.validate()?;
        let sizes = shape.layer_sizes();
        if layers.len() + 1 != sizes.len() {
            return Err(ModelError::dim("layer count", sizes.len() - 1, layers.len()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.cols != sizes[l] {
                return Err(ModelError::dim("layer input width", sizes[l], layer.cols));
            }
            if layer.rows != sizes[l + 1] {
                return Err(ModelError::dim("layer output width", sizes[l + 1], layer.rows));
            }
            if layer.weight.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
                return Err(ModelError::dim(
                    "layer payload",
                    layer.rows * (layer.cols + 1),
                    layer.weight.len() + layer.bias.len(),
                ));
            }
        }
        in_norm.validate("input normalizer", shape.input_dim())?;
        out_norm.validate("output normalizer", shape.n_x)?;
        Ok(DynamicsModel { shape, layers, in_norm, out_norm })
    }

    /// All parameters zero, unit normalizers: `x_{t+1} = x_t`.
    pub fn zeros(shape: ModelShape) -> Result<Self, ModelError> {
        shape.validate()?;
        let sizes = shape.layer_sizes();
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[1], w[0])).collect();
        let in_norm = Normalizer::identity(shape.input_dim());
        let out_norm = Normalizer::identity(shape.n_x);
        Self::new(shape, layers, in_norm, out_norm)
    }

    /// Glorot-uniform hidden layers, biases zero. When `zero_output` is set
    /// the last layer starts at zero.
    pub fn initialized(shape: ModelShape, seed: u64, zero_output: bool) -> Result<Self, ModelError> {
        let mut m = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = m.layers.len();
        for (l, layer) in m.layers.iter_mut().enumerate() {
            if zero_output && l + 1 == n {
                continue;
            }
            let a = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in layer.weight.iter_mut() {
                *w = rng.gen_range(-a..a);
            }
        }
        Ok(m)
    }

    /// Random weights, biases and normalizers; for tests and benchmarks.
    pub fn random(shape: ModelShape, seed: u64) -> Result<Self, ModelError> {
        let mut m = Self::initialized(shape, seed, false)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for layer in m.layers.iter_mut() {
            for b in layer.bias.iter_mut() {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        for i in 0..m.in_norm.len() {
            m.in_norm.mean[i] = rng.gen_range(-0.5..0.5);
            m.in_norm.std[i] = rng.gen_range(0.5..2.0);
        }
        for i in 0..m.out_norm.len() {
            m.out_norm.mean[i] = rng.gen_range(-0.1..0.1);
            m.out_norm.std[i] = rng.gen_range(0.1..1.0);
        }
        Ok(m)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn n_x(&self) -> usize {
        self.shape.n_x
    }

    pub fn n_u(&self) -> usize {
        self.shape.n_u
    }

    pub fn history_len(&self) -> usize {
        self.shape.history_len
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_normalizer(&self) -> &Normalizer {
        &self.in_norm
    }

    pub fn out_normalizer(&self) -> &Normalizer {
        &self.out_norm
    }

    pub(crate) fn set_normalizers(&mut self, in_norm: Normalizer, out_norm: Normalizer) {
        self.in_norm = in_norm;
        self.out_norm = out_norm;
    }

    pub fn new_history(&self) -> HistoryWindow {
        HistoryWindow::new(self.shape.n_x, self.shape.n_u, self.shape.history_len)
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new()
    }

    pub(crate) fn check_dims(&self, state: &[f64], action: &[f64], history: &HistoryWindow) -> Result<(), ModelError> {
        let s = &self.shape;
        if state.len() != s.n_x {
            return Err(ModelError::dim("state", s.n_x, state.len()));
        }
        if action.len() != s.n_u {
            return Err(ModelError::dim("action", s.n_u, action.len()));
        }
        if history.len() != s.history_len {
            return Err(ModelError::dim("history length", s.history_len, history.len()));
        }
        if history.n_x() != s.n_x {
            return Err(ModelError::dim("history state", s.n_x, history.n_x()));
        }
        if history.n_u() != s.n_u {
            return Err(ModelError::dim("history action", s.n_u, history.n_u()));
        }
        Ok(())
    }

    fn state_slot_offset(&self, k: usize) -> usize {
        k * self.shape.feature_width()
    }

    fn action_slot_offset(&self, k: usize) -> usize {
        self.shape.feature_width() * (self.shape.history_len + 1) + k * self.shape.n_u
    }

    /// Writes the raw (unnormalized) input vector. Cold history slots are
    /// written as zeros; the number of filled past slots is returned.
    pub fn encode_input(&self, state: &[f64], action: &[f64], history: &HistoryWindow, out: &mut [f64]) -> usize {
        let s = &self.shape;
        let f = s.feature_width();
        let fill = history.fill();
        encode_state(&s.state_features, state, &mut out[0..f]);
        let a0 = self.action_slot_offset(0);
        out[a0..a0 + s.n_u].copy_from_slice(action);
        for k in 1..=s.history_len {
            let so = self.state_slot_offset(k);
            let ao = self.action_slot_offset(k);
            match (history.state_back(k), history.action_back(k)) {
                (Some(x), Some(u)) => {
                    encode_state(&s.state_features, x, &mut out[so..so + f]);
                    out[ao..ao + s.n_u].copy_from_slice(u);
                }
                _ => {
                    out[so..so + f].fill(0.0);
                    out[ao..ao + s.n_u].fill(0.0);
                }
            }
        }
        fill
    }

    fn slot_available(&self, index: usize, fill: usize) -> bool {
        let f = self.shape.feature_width();
        let nu = self.shape.n_u;
        let state_end = f * (self.shape.history_len + 1);
        let k = if index < state_end { index / f.max(1) } else { (index - state_end) / nu };
        k == 0 || k <= fill
    }

    /// Normalizes a raw input in place; cold history slots become exactly 0.
    pub fn normalize_input(&self, raw: &mut [f64], fill: usize) {
        for (i, v) in raw.iter_mut().enumerate() {
            *v = if self.slot_available(i, fill) { (*v - self.in_norm.mean[i]) / self.in_norm.std[i] } else { 0.0 };
        }
    }

    /// Normalized input for one `(state, action, history)` triple.
    pub fn normalized_input(&self, state: &[f64], action: &[f64], history: &HistoryWindow, out: &mut [f64]) {
        let fill = self.encode_input(state, action, history, out);
        self.normalize_input(out, fill);
    }

    /// Evaluates increments for a feature-major batch of normalized inputs.
    /// `inputs` has `input_dim × batch` entries; `out` gets `n_x × batch`.
    pub fn increment_batch(&self, inputs: &[f64], batch: usize, ws: &mut Workspace, out: &mut [f64]) {
        ws.prepare(&self.layers, batch);
        ws.input_mut().copy_from_slice(inputs);
        mlp::forward(&self.layers, ws);
        let y = ws.output();
        for i in 0..self.shape.n_x {
            let (m, s) = (self.out_norm.mean[i], self.out_norm.std[i]);
            for k in 0..batch {
                out[i * batch + k] = y[i * batch + k] * s + m;
            }
        }
    }

    /// Applies an increment to a state, wrapping angle coordinates.
    pub fn apply_increment(&self, state: &[f64], increment: &[f64], out: &mut [f64]) {
        for (i, kind) in self.shape.state_features.iter().enumerate() {
            let v = state[i] + increment[i];
            out[i] = if *kind == FeatureKind::Angle { wrap_angle(v) } else { v };
        }
    }

    /// One-step prediction `x_{t+1}`.
    pub fn forward(&self, state: &[f64], action: &[f64], history: &HistoryWindow) -> Result<Vec<f64>, ModelError> {
        self.check_dims(state, action, history)?;
        let mut ws = Workspace::new();
        let mut input = vec![0.0; self.input_dim()];
        self.normalized_input(state, action, history, &mut input);
        let mut inc = vec![0.0; self.n_x()];
        self.increment_batch(&input, 1, &mut ws, &mut inc);
        let mut next = vec![0.0; self.n_x()];
        self.apply_increment(state, &inc, &mut next);
        Ok(next)
    }

    /// `∂Δ/∂(raw input)`, `n_x × input_dim`; columns of cold slots are zero.
    fn input_jacobian(&self, state: &[f64], action: &[f64], history: &HistoryWindow) -> DMatrix<f64> {
        let mut input = vec![0.0; self.input_dim()];
        let fill = self.encode_input(state, action, history, &mut input);
        self.normalize_input(&mut input, fill);
        let mut ws = Workspace::new();
        ws.prepare(&self.layers, 1);
        ws.input_mut().copy_from_slice(&input);
        mlp::forward(&self.layers, &mut ws);

        let n = self.layers.len();
        let last = &self.layers[n - 1];
        // M = diag(σ_out) · W_L
        let mut m = DMatrix::from_fn(last.rows, last.cols, |i, j| self.out_norm.std[i] * last.w(i, j));
        for l in (0..n - 1).rev() {
            let act = &ws.acts[l + 1];
            for (j, a) in act.iter().enumerate().take(m.ncols()) {
                m.column_mut(j).scale_mut(1.0 - a * a);
            }
            let layer = &self.layers[l];
            let w = DMatrix::from_row_slice(layer.rows, layer.cols, &layer.weight);
            m *= w;
        }
        for j in 0..m.ncols() {
            let scale = if self.slot_available(j, fill) { 1.0 / self.in_norm.std[j] } else { 0.0 };
            m.column_mut(j).scale_mut(scale);
        }
        m
    }

    fn chain_state_block(&self, jac: &DMatrix<f64>, offset: usize, x: Option<&[f64]>) -> DMatrix<f64> {
        let nx = self.shape.n_x;
        let mut out = DMatrix::zeros(nx, nx);
        let Some(x) = x else { return out };
        let mut o = offset;
        for (c, kind) in self.shape.state_features.iter().enumerate() {
            match kind {
                FeatureKind::Raw => {
                    out.set_column(c, &jac.column(o));
                    o += 1;
                }
                FeatureKind::Angle => {
                    let (s, co) = x[c].sin_cos();
                    let col = jac.column(o) * co - jac.column(o + 1) * s;
                    out.set_column(c, &col);
                    o += 2;
                }
                FeatureKind::Ignored => {}
            }
        }
        out
    }

    pub(crate) fn slot_partials(&self, state: &[f64], action: &[f64], history: &HistoryWindow) -> SlotPartials {
        let jac = self.input_jacobian(state, action, history);
        let h = self.shape.history_len;
        let nu = self.shape.n_u;
        let mut states = Vec::with_capacity(h + 1);
        let mut actions = Vec::with_capacity(h + 1);
        for k in 0..=h {
            let x = if k == 0 { Some(state) } else { history.state_back(k) };
            states.push(self.chain_state_block(&jac, self.state_slot_offset(k), x));
            let ao = self.action_slot_offset(k);
            actions.push(jac.columns(ao, nu).into_owned());
        }
        SlotPartials { states, actions }
    }

    /// `A = ∂x_{t+1}/∂x_t`, `B = ∂x_{t+1}/∂u_t`; history entries held fixed.
    pub fn jacobians(
        &self,
        state: &[f64],
        action: &[f64],
        history: &HistoryWindow,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
        self.check_dims(state, action, history)?;
        let p = self.slot_partials(state, action, history);
        let nx = self.shape.n_x;
        let a = DMatrix::identity(nx, nx) + &p.states[0];
        Ok((a, p.actions[0].clone()))
    }

    /// Jacobians of the augmented map `z_{t+1} = F(z_t, u_t)` with
    /// `z_t = [x_t, x_{t-1}, …, x_{t-H}, u_{t-1}, …, u_{t-H}]`.
    ///
    /// Only the first block row comes from the network; the rest is the
    /// exact shift structure.
    pub fn augmented_jacobian(
        &self,
        state: &[f64],
        action: &[f64],
        history: &HistoryWindow,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
        let h = self.shape.history_len;
        if h == 0 {
            return Err(ModelError::NoHistory);
        }
        self.check_dims(state, action, history)?;
        let (nx, nu) = (self.shape.n_x, self.shape.n_u);
        let nz = self.shape.augmented_dim();
        let p = self.slot_partials(state, action, history);
        let u_base = nx * (h + 1);

        let mut a = DMatrix::zeros(nz, nz);
        let mut b = DMatrix::zeros(nz, nu);
        a.view_mut((0, 0), (nx, nx)).copy_from(&p.states[0]);
        for i in 0..nx {
            a[(i, i)] += 1.0;
        }
        for k in 1..=h {
            a.view_mut((0, k * nx), (nx, nx)).copy_from(&p.states[k]);
            a.view_mut((0, u_base + (k - 1) * nu), (nx, nu)).copy_from(&p.actions[k]);
        }
        // x_{t-k+1} moves into the x_{t-k} slot
        for k in 1..=h {
            for i in 0..nx {
                a[(k * nx + i, (k - 1) * nx + i)] = 1.0;
            }
        }
        // u_{t-k+1} moves into the u_{t-k} slot, u_t enters through B
        for k in 2..=h {
            for i in 0..nu {
                a[(u_base + (k - 1) * nu + i, u_base + (k - 2) * nu + i)] = 1.0;
            }
        }
        b.view_mut((0, 0), (nx, nu)).copy_from(&p.actions[0]);
        for i in 0..nu {
            b[(u_base + i, i)] = 1.0;
        }
        Ok((a, b))
    }

    /// Builds `z_t` from the current state and history; cold slots are zero.
    pub fn augmented_state(&self, state: &[f64], history: &HistoryWindow) -> Vec<f64> {
        let (nx, nu, h) = (self.shape.n_x, self.shape.n_u, self.shape.history_len);
        let mut z = vec![0.0; self.shape.augmented_dim()];
        z[..nx].copy_from_slice(state);
        for k in 1..=h {
            if let Some(x) = history.state_back(k) {
                z[k * nx..(k + 1) * nx].copy_from_slice(x);
            }
            if let Some(u) = history.action_back(k) {
                let o = nx * (h + 1) + (k - 1) * nu;
                z[o..o + nu].copy_from_slice(u);
            }
        }
        z
    }

    /// Feature kinds over the augmented coordinates (actions are `Raw`).
    pub fn augmented_features(&self) -> Vec<FeatureKind> {
        let mut kinds = Vec::with_capacity(self.shape.augmented_dim());
        for _ in 0..=self.shape.history_len {
            kinds.extend_from_slice(&self.shape.state_features);
        }
        kinds.extend(std::iter::repeat_n(FeatureKind::Raw, self.shape.n_u * self.shape.history_len));
        kinds
    }
}
