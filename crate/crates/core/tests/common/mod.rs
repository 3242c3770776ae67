#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use toast::nn_dynamics::{wrap_angle, DynamicsModel, FeatureKind, HistoryWindow, ModelShape};

pub fn shape(h: usize, hidden: Vec<usize>) -> ModelShape {
    ModelShape {
        n_x: 4,
        n_u: 2,
        history_len: h,
        state_features: vec![FeatureKind::Angle, FeatureKind::Raw, FeatureKind::Ignored, FeatureKind::Raw],
        hidden,
    }
}

pub fn random_state(rng: &mut ChaCha8Rng) -> Vec<f64> {
    vec![rng.gen_range(-2.5..2.5), rng.gen_range(-2.0..2.0), rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..2.0)]
}

pub fn random_action(rng: &mut ChaCha8Rng) -> Vec<f64> {
    vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]
}

pub fn random_history(model: &DynamicsModel, rng: &mut ChaCha8Rng) -> HistoryWindow {
    let mut h = model.new_history();
    for _ in 0..model.history_len() {
        let (x, u) = (random_state(rng), random_action(rng));
        h.push(&x, &u).unwrap();
    }
    h
}

pub fn diff(kinds: &[FeatureKind], a: &[f64], b: &[f64]) -> Vec<f64> {
    kinds
        .iter()
        .zip(a.iter().zip(b))
        .map(|(k, (p, q))| if *k == FeatureKind::Angle { wrap_angle(p - q) } else { p - q })
        .collect()
}

// Maximum entrywise error relative to the largest finite-difference entry.
pub fn rel_err(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    let scale = fd.amax().max(1e-12);
    (analytic - fd).amax() / scale
}

// Raw step equal to 1e-5 in the normalized input coordinate.
pub fn state_steps(model: &DynamicsModel) -> Vec<f64> {
    let s = model.shape();
    let std = &model.in_normalizer().std;
    let mut o = 0;
    s.state_features
        .iter()
        .map(|k| {
            let step = match k {
                FeatureKind::Raw => 1e-5 * std[o],
                _ => 1e-5,
            };
            o += k.width();
            step
        })
        .collect()
}

pub fn action_steps(model: &DynamicsModel) -> Vec<f64> {
    let s = model.shape();
    let o = s.feature_width() * (s.history_len + 1);
    (0..s.n_u).map(|j| 1e-5 * model.in_normalizer().std[o + j]).collect()
}

// Central differences of `f` over each coordinate of `at`.
fn central(
    kinds: &[FeatureKind],
    rows: usize,
    at: &[f64],
    steps: &[f64],
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, at.len());
    for j in 0..at.len() {
        let (mut p, mut q) = (at.to_vec(), at.to_vec());
        p[j] += steps[j];
        q[j] -= steps[j];
        let d = diff(kinds, &f(&p), &f(&q));
        for i in 0..rows {
            m[(i, j)] = d[i] / (2.0 * steps[j]);
        }
    }
    m
}

pub fn fd_jacobians(model: &DynamicsModel, x: &[f64], u: &[f64], h: &HistoryWindow) -> (DMatrix<f64>, DMatrix<f64>) {
    let kinds = &model.shape().state_features;
    let nx = model.n_x();
    let a = central(kinds, nx, x, &state_steps(model), |p| model.forward(p, u, h).unwrap());
    let b = central(kinds, nx, u, &action_steps(model), |p| model.forward(x, p, h).unwrap());
    (a, b)
}

// z = [x_t, x_{t-1}, …, x_{t-H}, u_{t-1}, …, u_{t-H}]
pub fn augmented_step(model: &DynamicsModel, z: &[f64], u: &[f64]) -> Vec<f64> {
    let (nx, nu, hl) = (model.n_x(), model.n_u(), model.history_len());
    let xs = |k: usize| z[k * nx..(k + 1) * nx].to_vec();
    let us = |k: usize| {
        let o = nx * (hl + 1) + (k - 1) * nu;
        z[o..o + nu].to_vec()
    };
    let entries: Vec<_> = (1..=hl).rev().map(|k| (xs(k), us(k))).collect();
    let h = HistoryWindow::from_entries(nx, nu, hl, &entries).unwrap();
    let mut out = model.forward(&xs(0), u, &h).unwrap();
    for k in 0..hl {
        out.extend(xs(k));
    }
    out.extend_from_slice(u);
    for k in 1..hl {
        out.extend(us(k));
    }
    out
}

pub fn fd_augmented(model: &DynamicsModel, x: &[f64], u: &[f64], h: &HistoryWindow) -> (DMatrix<f64>, DMatrix<f64>) {
    let kinds = model.augmented_features();
    let nz = model.shape().augmented_dim();
    let (nx, nu, hl) = (model.n_x(), model.n_u(), model.history_len());
    let (sx, su) = (state_steps(model), action_steps(model));
    let steps: Vec<f64> =
        (0..nz).map(|j| if j < nx * (hl + 1) { sx[j % nx] } else { su[(j - nx * (hl + 1)) % nu] }).collect();
    let z = model.augmented_state(x, h);
    let a = central(&kinds, nz, &z, &steps, |p| augmented_step(model, p, u));
    let b = central(&kinds, nz, u, &su, |p| augmented_step(model, &z, p));
    (a, b)
}

// Checks every entry below the first block row against the exact shift.
pub fn shift_blocks_exact(model: &DynamicsModel, a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let (nx, nu, hl) = (model.n_x(), model.n_u(), model.history_len());
    let ub = nx * (hl + 1);
    let nz = a.nrows();
    for r in nx..nz {
        let src = if r < ub {
            Some(r - nx)
        } else if r >= ub + nu {
            Some(r - nu)
        } else {
            None
        };
        for c in 0..nz {
            let want = if Some(c) == src { 1.0 } else { 0.0 };
            if a[(r, c)].to_bits() != f64::to_bits(want) {
                return false;
            }
        }
        for c in 0..nu {
            let want = if r >= ub && r < ub + nu && r - ub == c { 1.0 } else { 0.0 };
            if b[(r, c)].to_bits() != f64::to_bits(want) {
                return false;
            }
        }
    }
    true
}
