//! `TOASTNN1` model files.
//!
//! Integers are little-endian `u32` unless noted, reals little-endian IEEE-754
//! `f64`. Layout:
//!
//! | field            | type              | notes                                   |
//! |------------------|-------------------|-----------------------------------------|
//! | magic            | 8 bytes           | ASCII `TOASTNN1`                        |
//! | version          | u32               | currently 1                             |
//! | n_x, n_u         | u32, u32          |                                         |
//! | history_len      | u32               | `H`                                     |
//! | activation       | u32               | 1 = tanh on hidden layers               |
//! | n_sizes          | u32               | number of layer sizes (`L + 1`)         |
//! | sizes            | u32 × n_sizes     | input, hidden…, output                  |
//! | feature kinds    | u8 × n_x          | 0 raw, 1 angle (sin/cos), 2 ignored     |
//! | payload_len      | u64               | number of f64 values that follow        |
//! | in mean, in std  | f64 × in each     |                                         |
//! | out mean, out std| f64 × n_x each    |                                         |
//! | per layer        | f64 × rows·cols, then f64 × rows | weights row-major, then bias |
//!
//! Nothing may follow the payload.

use std::fs;
use std::path::Path;

use super::features::FeatureKind;
use super::mlp::Dense;
use super::{DynamicsModel, ModelError, ModelShape, Normalizer};

pub const MAGIC: &[u8; 8] = b"TOASTNN1";
pub const VERSION: u32 = 1;
const ACTIVATION_TANH: u32 = 1;

pub fn to_bytes(model: &DynamicsModel) -> Vec<u8> {
    let shape = model.shape();
    let sizes = shape.layer_sizes();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in
        [VERSION, shape.n_x as u32, shape.n_u as u32, shape.history_len as u32, ACTIVATION_TANH, sizes.len() as u32]
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in &sizes {
        out.extend_from_slice(&(*s as u32).to_le_bytes());
    }
    out.extend(shape.state_features.iter().map(|k| k.code()));
    let mut payload: Vec<f64> = Vec::new();
    let (inn, outn) = (model.in_normalizer(), model.out_normalizer());
    payload.extend(&inn.mean);
    payload.extend(&inn.std);
    payload.extend(&outn.mean);
    payload.extend(&outn.std);
    for l in model.layers() {
        payload.extend(&l.weight);
        payload.extend(&l.bias);
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::Truncated(format!("file ends inside {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, ModelError> {
        let bytes = self.take(n * 8, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<DynamicsModel, ModelError> {
    let mut r = Reader { buf, pos: 0 };
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(ModelError::Format("bad magic, not a TOASTNN1 model file".into()));
    }
    r.pos = MAGIC.len();
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(ModelError::Version(version));
    }
    let n_x = r.u32("header")? as usize;
    let n_u = r.u32("header")? as usize;
    let history_len = r.u32("header")? as usize;
    let activation = r.u32("header")?;
    if activation != ACTIVATION_TANH {
        return Err(ModelError::Format(format!("unknown activation id {activation}")));
    }
    let n_sizes = r.u32("header")? as usize;
    if n_sizes < 2 {
        return Err(ModelError::Format("a model needs at least input and output sizes".into()));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(r.u32("layer sizes")? as usize);
    }
    let kinds = r.take(n_x, "feature kinds")?;
    let state_features = kinds
        .iter()
        .map(|&c| FeatureKind::from_code(c).ok_or_else(|| ModelError::Format(format!("unknown feature kind {c}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let shape = ModelShape { n_x, n_u, history_len, state_features, hidden: sizes[1..n_sizes - 1].to_vec() };
    shape.validate()?;
    if sizes[0] != shape.input_dim() {
        return Err(ModelError::dim("declared input size", shape.input_dim(), sizes[0]));
    }
    if sizes[n_sizes - 1] != n_x {
        return Err(ModelError::dim("declared output size", n_x, sizes[n_sizes - 1]));
    }
    let nin = sizes[0];
    let expected: usize = 2 * nin + 2 * n_x + sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum::<usize>();
    let declared = r.u64("payload length")? as usize;
    if declared != expected {
        return Err(ModelError::dim("payload length", expected, declared));
    }
    let payload_bytes = buf.len() - r.pos;
    if payload_bytes < declared * 8 {
        return Err(ModelError::Truncated(format!("payload holds {} of {} values", payload_bytes / 8, declared)));
    }
    if payload_bytes > declared * 8 {
        return Err(ModelError::Format("trailing bytes after payload".into()));
    }
    let in_norm = Normalizer { mean: r.f64s(nin, "input mean")?, std: r.f64s(nin, "input std")? };
    let out_norm = Normalizer { mean: r.f64s(n_x, "output mean")?, std: r.f64s(n_x, "output std")? };
    let mut layers = Vec::with_capacity(n_sizes - 1);
    for w in sizes.windows(2) {
        let (cols, rows) = (w[0], w[1]);
        layers.push(Dense { rows, cols, weight: r.f64s(rows * cols, "weights")?, bias: r.f64s(rows, "bias")? });
    }
    DynamicsModel::new(shape, layers, in_norm, out_norm)
}

pub fn save(model: &DynamicsModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<DynamicsModel, ModelError> {
    from_bytes(&fs::read(path)?)
}
