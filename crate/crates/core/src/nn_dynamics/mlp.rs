//! Dense tanh network evaluated column-batched.
//!
//! Batches are stored feature-major: entry `(feature j, sample k)` lives at
//! `j * batch + k`. Every output element is accumulated as
//! `bias + Σ_j w_ij x_j` in increasing `j`, independent of the batch size,
//! so a batch of one and a batch of many give bitwise-identical columns.

/// One affine layer, weights row-major `rows × cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense { rows, cols, weight: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    #[inline]
    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.cols + j]
    }

    fn forward_batch(&self, input: &[f64], batch: usize, out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.cols * batch);
        debug_assert_eq!(out.len(), self.rows * batch);
        for i in 0..self.rows {
            let o = &mut out[i * batch..(i + 1) * batch];
            o.fill(self.bias[i]);
            let row = &self.weight[i * self.cols..(i + 1) * self.cols];
            for (j, &w) in row.iter().enumerate() {
                let x = &input[j * batch..(j + 1) * batch];
                for (o, &x) in o.iter_mut().zip(x) {
                    *o += w * x;
                }
            }
        }
    }
}

/// Scratch buffers holding every layer's activations for one batch.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    batch: usize,
    /// `acts[0]` is the input, `acts[l]` the output of layer `l`.
    pub(crate) acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn prepare(&mut self, layers: &[Dense], batch: usize) {
        if self.batch == batch && self.acts.len() == layers.len() + 1 {
            return;
        }
        self.batch = batch;
        self.acts.clear();
        self.acts.push(vec![0.0; layers[0].cols * batch]);
        for l in layers {
            self.acts.push(vec![0.0; l.rows * batch]);
        }
    }

    pub(crate) fn input_mut(&mut self) -> &mut [f64] {
        &mut self.acts[0]
    }

    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Runs the network on `ws.acts[0]`; tanh on hidden layers, identity on the last.
pub(crate) fn forward(layers: &[Dense], ws: &mut Workspace) {
    let batch = ws.batch;
    let n = layers.len();
    for (l, layer) in layers.iter().enumerate() {
        let (head, tail) = ws.acts.split_at_mut(l + 1);
        let out = &mut tail[0];
        layer.forward_batch(&head[l], batch, out);
        if l + 1 < n {
            for v in out.iter_mut() {
                *v = v.tanh();
            }
        }
    }
}

/// Accumulates parameter gradients of `Σ_k d_out[:,k] · y[:,k]` into `grads`
/// (same shapes as `layers`), given the forward pass stored in `ws`.
pub(crate) fn backward(layers: &[Dense], ws: &mut Workspace, d_out: &[f64], grads: &mut [Dense]) {
    let batch = ws.batch;
    let n = layers.len();
    ws.delta.clear();
    ws.delta.extend_from_slice(d_out);
    for l in (0..n).rev() {
        let layer = &layers[l];
        let input = &ws.acts[l];
        let g = &mut grads[l];
        for i in 0..layer.rows {
            let d = &ws.delta[i * batch..(i + 1) * batch];
            g.bias[i] += d.iter().sum::<f64>();
            for j in 0..layer.cols {
                let x = &input[j * batch..(j + 1) * batch];
                let mut s = 0.0;
                for (a, b) in d.iter().zip(x) {
                    s += a * b;
                }
                g.weight[i * layer.cols + j] += s;
            }
        }
        if l == 0 {
            break;
        }
        ws.delta_prev.clear();
        ws.delta_prev.resize(layer.cols * batch, 0.0);
        for i in 0..layer.rows {
            let d = &ws.delta[i * batch..(i + 1) * batch];
            for j in 0..layer.cols {
                let w = layer.w(i, j);
                let dp = &mut ws.delta_prev[j * batch..(j + 1) * batch];
                for (p, &d) in dp.iter_mut().zip(d) {
                    *p += w * d;
                }
            }
        }
        // input of layer l is a tanh activation
        for (p, &a) in ws.delta_prev.iter_mut().zip(input.iter()) {
            *p *= 1.0 - a * a;
        }
        std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
    }
}
