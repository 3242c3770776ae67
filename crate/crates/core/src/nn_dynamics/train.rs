use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{self, Dense, Workspace};
use super::{DynamicsModel, ModelError, ModelShape, Normalizer};

/// One supervised transition: raw history-augmented input features and the
/// state increment `x_{t+1} − x_t` (angles wrapped).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub validation_fraction: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 200,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            validation_fraction: 0.2,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(ModelError::Invalid("validation_fraction must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::Invalid("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Invalid("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(ModelError::Invalid("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch losses (mean squared error of normalized increments), measured
/// on the full split after each epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub n_train: usize,
    pub n_val: usize,
}

impl TrainReport {
    pub fn final_val_loss(&self) -> f64 {
        self.val_loss.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_val_rmse(&self) -> f64 {
        self.final_val_loss().sqrt()
    }
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    step: i32,
}

impl Adam {
    fn new(layers: &[Dense]) -> Self {
        let zeros: Vec<Dense> = layers.iter().map(|l| Dense::zeros(l.rows, l.cols)).collect();
        Adam { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn update(&mut self, layers: &mut [Dense], grads: &[Dense], cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = cfg.learning_rate;
        let eps = cfg.adam_epsilon;
        for (l, layer) in layers.iter_mut().enumerate() {
            let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
            let g = grads[l].weight.iter().chain(grads[l].bias.iter());
            let Dense { weight: mw, bias: mb, .. } = &mut self.m[l];
            let m = mw.iter_mut().chain(mb.iter_mut());
            let Dense { weight: vw, bias: vb, .. } = &mut self.v[l];
            let v = vw.iter_mut().chain(vb.iter_mut());
            for (((p, &g), m), v) in params.zip(g).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

fn check_dataset(shape: &ModelShape, data: &[TransitionSample]) -> Result<(), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let (nin, nx) = (shape.input_dim(), shape.n_x);
    for (i, s) in data.iter().enumerate() {
        if s.input.len() != nin {
            return Err(ModelError::dim("sample input", nin, s.input.len()));
        }
        if s.target.len() != nx {
            return Err(ModelError::dim("sample target", nx, s.target.len()));
        }
        if s.input.iter().chain(&s.target).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index: i });
        }
    }
    Ok(())
}

/// Fills a feature-major batch of normalized inputs and targets.
fn load_batch(
    data: &[TransitionSample],
    idx: &[usize],
    in_norm: &Normalizer,
    out_norm: &Normalizer,
    inputs: &mut Vec<f64>,
    targets: &mut Vec<f64>,
) {
    let b = idx.len();
    let nin = in_norm.len();
    let nx = out_norm.len();
    inputs.resize(nin * b, 0.0);
    targets.resize(nx * b, 0.0);
    for (k, &s) in idx.iter().enumerate() {
        let sample = &data[s];
        for j in 0..nin {
            inputs[j * b + k] = (sample.input[j] - in_norm.mean[j]) / in_norm.std[j];
        }
        for i in 0..nx {
            targets[i * b + k] = (sample.target[i] - out_norm.mean[i]) / out_norm.std[i];
        }
    }
}

/// Normalized mean squared error of `model` over `idx`.
pub fn evaluate_loss(model: &DynamicsModel, data: &[TransitionSample], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let mut ws = Workspace::new();
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    let nx = model.n_x();
    let mut total = 0.0;
    for chunk in idx.chunks(1024) {
        load_batch(data, chunk, model.in_normalizer(), model.out_normalizer(), &mut inputs, &mut targets);
        ws.prepare(model.layers(), chunk.len());
        ws.input_mut().copy_from_slice(&inputs);
        mlp::forward(model.layers(), &mut ws);
        for (y, t) in ws.output().iter().zip(&targets) {
            total += (y - t) * (y - t);
        }
    }
    total / (idx.len() * nx) as f64
}

/// Minibatch Adam on the mean squared error of normalized increments.
///
/// The dataset is split once with a seeded shuffle; normalizers are fitted on
/// the training split only. Runs are reproducible bit-for-bit given the seed.
pub fn train(
    shape: &ModelShape,
    data: &[TransitionSample],
    cfg: &TrainConfig,
) -> Result<(DynamicsModel, TrainReport), ModelError> {
    shape.validate()?;
    cfg.validate()?;
    check_dataset(shape, data)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if data.len() < 2 {
        0
    } else {
        ((data.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, data.len() - 1)
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    // a single sample validates against itself
    let val_idx: Vec<usize> = if val_idx.is_empty() { train_idx.clone() } else { val_idx.to_vec() };

    let in_norm = Normalizer::fit(shape.input_dim(), train_idx.iter().map(|&i| data[i].input.as_slice()));
    let out_norm = Normalizer::fit(shape.n_x, train_idx.iter().map(|&i| data[i].target.as_slice()));
    let mut model = DynamicsModel::initialized(shape.clone(), cfg.rng_seed.wrapping_add(1), true)?;
    model.set_normalizers(in_norm, out_norm);

    let mut adam = Adam::new(model.layers());
    let mut grads: Vec<Dense> = model.layers().iter().map(|l| Dense::zeros(l.rows, l.cols)).collect();
    let mut ws = Workspace::new();
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    let mut d_out = Vec::new();
    let mut report = TrainReport { n_train: train_idx.len(), n_val: val_idx.len(), ..Default::default() };
    let nx = shape.n_x;
    let (inn, outn) = (model.in_normalizer().clone(), model.out_normalizer().clone());

    for _ in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let b = chunk.len();
            load_batch(data, chunk, &inn, &outn, &mut inputs, &mut targets);
            ws.prepare(model.layers(), b);
            ws.input_mut().copy_from_slice(&inputs);
            mlp::forward(model.layers(), &mut ws);
            // d/dy of mean((y − t)²)
            let scale = 2.0 / (b * nx) as f64;
            d_out.clear();
            d_out.extend(ws.output().iter().zip(&targets).map(|(y, t)| scale * (y - t)));
            for g in grads.iter_mut() {
                g.weight.fill(0.0);
                g.bias.fill(0.0);
            }
            mlp::backward(model.layers(), &mut ws, &d_out, &mut grads);
            adam.update(model.layers_mut(), &grads, cfg);
        }
        report.train_loss.push(evaluate_loss(&model, data, &train_idx));
        report.val_loss.push(evaluate_loss(&model, data, &val_idx));
    }
    Ok((model, report))
}
