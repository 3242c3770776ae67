use super::ModelError;

/// Fixed-length window of past states and actions (most recent last).
///
/// `push(x_t, u_t)` is called after `u_t` has been applied at `x_t`, so at
/// time `t` the newest entry is `(x_{t-1}, u_{t-1})`. Until `len` pushes have
/// happened the window is cold and the missing slots are zero-filled in the
/// model's normalized input space.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow {
    n_x: usize,
    n_u: usize,
    len: usize,
    fill: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
}

impl HistoryWindow {
    pub fn new(n_x: usize, n_u: usize, len: usize) -> Self {
        HistoryWindow { n_x, n_u, len, fill: 0, states: vec![0.0; n_x * len], actions: vec![0.0; n_u * len] }
    }

    /// A window already filled with the given entries, oldest first.
    pub fn from_entries(
        n_x: usize,
        n_u: usize,
        len: usize,
        entries: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Self, ModelError> {
        let mut h = HistoryWindow::new(n_x, n_u, len);
        for (x, u) in entries {
            h.push(x, u)?;
        }
        Ok(h)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of valid entries, saturating at `len`.
    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn is_warm(&self) -> bool {
        self.fill == self.len
    }

    pub fn push(&mut self, state: &[f64], action: &[f64]) -> Result<(), ModelError> {
        if state.len() != self.n_x {
            return Err(ModelError::dim("history state", self.n_x, state.len()));
        }
        if action.len() != self.n_u {
            return Err(ModelError::dim("history action", self.n_u, action.len()));
        }
        self.push_unchecked(state, action);
        Ok(())
    }

    pub(crate) fn push_unchecked(&mut self, state: &[f64], action: &[f64]) {
        if self.len == 0 {
            return;
        }
        let (nx, nu) = (self.n_x, self.n_u);
        self.states.copy_within(nx.., 0);
        self.actions.copy_within(nu.., 0);
        let sl = self.states.len();
        let al = self.actions.len();
        self.states[sl - nx..].copy_from_slice(state);
        self.actions[al - nu..].copy_from_slice(action);
        self.fill = (self.fill + 1).min(self.len);
    }

    /// `x_{t-k}` for `k` in `1..=len`; `None` when the slot is not filled yet.
    pub fn state_back(&self, k: usize) -> Option<&[f64]> {
        if k == 0 || k > self.fill {
            return None;
        }
        let idx = self.len - k;
        Some(&self.states[idx * self.n_x..(idx + 1) * self.n_x])
    }

    /// `u_{t-k}` for `k` in `1..=len`.
    pub fn action_back(&self, k: usize) -> Option<&[f64]> {
        if k == 0 || k > self.fill {
            return None;
        }
        let idx = self.len - k;
        Some(&self.actions[idx * self.n_u..(idx + 1) * self.n_u])
    }

    /// Past states, oldest first; cold slots are zeros.
    pub fn past_states(&self) -> &[f64] {
        &self.states
    }

    pub fn past_actions(&self) -> &[f64] {
        &self.actions
    }
}
