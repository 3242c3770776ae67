use super::*;
use nalgebra::DMatrix;

fn raw_shape(n_x: usize, n_u: usize, h: usize, hidden: Vec<usize>) -> ModelShape {
    ModelShape { n_x, n_u, history_len: h, state_features: vec![FeatureKind::Raw; n_x], hidden }
}

fn warm_history(model: &DynamicsModel, seed: f64) -> HistoryWindow {
    let mut h = model.new_history();
    for k in 0..model.history_len() {
        let x: Vec<f64> = (0..model.n_x()).map(|i| (seed + 0.3 * (i + k) as f64).sin()).collect();
        let u: Vec<f64> = (0..model.n_u()).map(|i| (seed - 0.7 * (i + k) as f64).cos()).collect();
        h.push(&x, &u).unwrap();
    }
    h
}

#[test]
fn zero_model_is_identity() {
    let m = DynamicsModel::zeros(raw_shape(3, 2, 2, vec![8, 8])).unwrap();
    let h = warm_history(&m, 0.4);
    let x = [0.3, -1.2, 4.0];
    assert_eq!(m.forward(&x, &[1.0, -1.0], &h).unwrap(), x.to_vec());
}

#[test]
fn linear_identity_block_doubles_state() {
    let shape = raw_shape(2, 1, 1, vec![]);
    let mut m = DynamicsModel::zeros(shape).unwrap();
    let layer = &mut m.layers_mut()[0];
    layer.weight[0] = 1.0; // row 0, x_t[0]
    layer.weight[layer.cols + 1] = 1.0; // row 1, x_t[1]
    let h = warm_history(&m, 1.0);
    let out = m.forward(&[0.7, -2.5], &[3.0], &h).unwrap();
    assert_eq!(out, vec![1.4, -5.0]);
}

#[test]
fn forward_rejects_bad_dims() {
    let m = DynamicsModel::zeros(raw_shape(2, 1, 1, vec![4])).unwrap();
    let h = m.new_history();
    match m.forward(&[0.0], &[0.0], &h) {
        Err(ModelError::Dimension { what, expected: 2, got: 1 }) => assert_eq!(what, "state"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(m.forward(&[0.0, 0.0], &[0.0, 1.0], &h).is_err());
    let wrong = HistoryWindow::new(2, 1, 3);
    assert!(m.forward(&[0.0, 0.0], &[0.0], &wrong).is_err());
}

#[test]
fn forward_is_pure() {
    let m = DynamicsModel::random(raw_shape(3, 1, 1, vec![16, 16]), 7).unwrap();
    let h = warm_history(&m, 0.1);
    let snapshot = h.clone();
    let a = m.forward(&[0.1, 0.2, 0.3], &[0.5], &h).unwrap();
    let b = m.forward(&[0.1, 0.2, 0.3], &[0.5], &h).unwrap();
    assert_eq!(a, b);
    assert_eq!(h, snapshot);
}

#[test]
fn zero_model_jacobians() {
    let m = DynamicsModel::zeros(raw_shape(3, 2, 1, vec![5])).unwrap();
    let h = warm_history(&m, 0.0);
    let (a, b) = m.jacobians(&[1.0, 2.0, 3.0], &[0.0, 0.0], &h).unwrap();
    assert_eq!(a, DMatrix::identity(3, 3));
    assert_eq!(b, DMatrix::zeros(3, 2));
}

#[test]
fn linear_model_jacobians_read_weight_blocks() {
    let shape = raw_shape(2, 1, 1, vec![]);
    let mut m = DynamicsModel::random(shape, 3).unwrap();
    m.set_normalizers(Normalizer::identity(6), Normalizer::identity(2));
    let layer = m.layers()[0].clone();
    let h = warm_history(&m, 0.5);
    let (a, b) = m.jacobians(&[0.2, -0.4], &[1.5], &h).unwrap();
    // input layout: x_t (0,1), x_{t-1} (2,3), u_t (4), u_{t-1} (5)
    for i in 0..2 {
        for j in 0..2 {
            let expect = layer.w(i, j) + if i == j { 1.0 } else { 0.0 };
            assert_eq!(a[(i, j)], expect);
        }
        assert_eq!(b[(i, 0)], layer.w(i, 4));
    }
}

#[test]
fn augmented_zero_model_is_pure_shift() {
    let m = DynamicsModel::zeros(raw_shape(2, 1, 1, vec![4])).unwrap();
    let h = warm_history(&m, 0.2);
    let (a, b) = m.augmented_jacobian(&[0.5, 0.5], &[0.1], &h).unwrap();
    let i2 = DMatrix::<f64>::identity(2, 2);
    let mut expect_a = DMatrix::zeros(5, 5);
    expect_a.view_mut((0, 0), (2, 2)).copy_from(&i2);
    expect_a.view_mut((2, 0), (2, 2)).copy_from(&i2);
    let mut expect_b = DMatrix::zeros(5, 1);
    expect_b[(4, 0)] = 1.0;
    assert_eq!(a, expect_a);
    assert_eq!(b, expect_b);
}

#[test]
fn augmented_requires_history() {
    let m = DynamicsModel::zeros(raw_shape(2, 1, 0, vec![4])).unwrap();
    let h = m.new_history();
    assert!(matches!(m.augmented_jacobian(&[0.0, 0.0], &[0.0], &h), Err(ModelError::NoHistory)));
}

#[test]
fn cold_history_slots_are_zero_in_normalized_space() {
    let m = DynamicsModel::random(raw_shape(2, 1, 2, vec![4]), 11).unwrap();
    let mut h = m.new_history();
    h.push(&[1.0, 2.0], &[3.0]).unwrap();
    let mut v = vec![f64::NAN; m.input_dim()];
    m.normalized_input(&[0.0, 0.0], &[0.0], &h, &mut v);
    // slots: x_t 0..2, x_{t-1} 2..4, x_{t-2} 4..6, u_t 6, u_{t-1} 7, u_{t-2} 8
    assert_eq!(&v[4..6], &[0.0, 0.0]);
    assert_eq!(v[8], 0.0);
    assert!(v[2] != 0.0 && v[7] != 0.0);
    // and the network does not depend on them
    let (a, _) = m.augmented_jacobian(&[0.1, 0.2], &[0.3], &h).unwrap();
    for i in 0..2 {
        for j in 4..6 {
            assert_eq!(a[(i, j)], 0.0);
        }
        assert_eq!(a[(i, 7)], 0.0);
    }
}

#[test]
fn angle_features_chain_rule() {
    let shape = ModelShape {
        n_x: 2,
        n_u: 1,
        history_len: 0,
        state_features: vec![FeatureKind::Angle, FeatureKind::Raw],
        hidden: vec![],
    };
    let mut m = DynamicsModel::zeros(shape).unwrap();
    // input [sin θ, cos θ, θ̇, u]; Δθ̇ = sin θ
    m.layers_mut()[0].weight[4] = 1.0;
    let theta = 0.3;
    let h = m.new_history();
    let next = m.forward(&[theta, 0.0], &[0.0], &h).unwrap();
    assert!((next[1] - theta.sin()).abs() < 1e-15);
    let (a, _) = m.jacobians(&[theta, 0.0], &[0.0], &h).unwrap();
    assert!((a[(1, 0)] - theta.cos()).abs() < 1e-15);
}

#[test]
fn increments_wrap_angles() {
    let shape = ModelShape { n_x: 1, n_u: 1, history_len: 0, state_features: vec![FeatureKind::Angle], hidden: vec![] };
    let mut m = DynamicsModel::zeros(shape).unwrap();
    m.layers_mut()[0].bias[0] = 0.5;
    let next = m.forward(&[3.0], &[0.0], &m.new_history()).unwrap();
    assert!((next[0] - (3.5 - 2.0 * std::f64::consts::PI)).abs() < 1e-12);
}

#[test]
fn model_rejects_inconsistent_layers() {
    let shape = raw_shape(2, 1, 0, vec![4]);
    let bad = vec![Dense::zeros(4, 3), Dense::zeros(2, 5)];
    assert!(DynamicsModel::new(shape.clone(), bad, Normalizer::identity(3), Normalizer::identity(2)).is_err());
    let ok = vec![Dense::zeros(4, 3), Dense::zeros(2, 4)];
    let mut norm = Normalizer::identity(3);
    norm.std[1] = 0.0;
    assert!(DynamicsModel::new(shape, ok, norm, Normalizer::identity(2)).is_err());
}

fn linear_dataset(n: usize) -> Vec<TransitionSample> {
    // x_{t+1} = 0.9 x_t + 0.1 u_t, sampled over a grid of (x, u)
    let mut data = Vec::new();
    for i in 0..n {
        let x = ((i * 37) % 101) as f64 / 50.0 - 1.0;
        let u = ((i * 53) % 97) as f64 / 48.0 - 1.0;
        let next = 0.9 * x + 0.1 * u;
        data.push(TransitionSample { input: vec![x, u], target: vec![next - x] });
    }
    data
}

#[test]
fn train_learns_linear_map() {
    let shape = raw_shape(1, 1, 0, vec![]);
    let cfg = TrainConfig::default();
    let (model, report) = train(&shape, &linear_dataset(10_000), &cfg).unwrap();
    assert!(report.final_val_loss() < 1e-6, "val {}", report.final_val_loss());
    let next = model.forward(&[0.5], &[-0.2], &model.new_history()).unwrap();
    assert!((next[0] - (0.45 - 0.02)).abs() < 1e-3);
}

#[test]
fn train_loss_monotone_on_noiseless_linear_data() {
    let shape = raw_shape(1, 1, 0, vec![]);
    let cfg = TrainConfig::default();
    let (_, report) = train(&shape, &linear_dataset(10_000), &cfg).unwrap();
    for w in report.train_loss.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn train_constant_target() {
    let shape = raw_shape(2, 1, 0, vec![8]);
    let data: Vec<_> = (0..200)
        .map(|i| TransitionSample {
            input: vec![(i as f64).sin(), (i as f64 * 0.3).cos(), (i % 7) as f64],
            target: vec![0.25, -1.5],
        })
        .collect();
    let cfg = TrainConfig { epochs: 20, ..Default::default() };
    let (model, report) = train(&shape, &data, &cfg).unwrap();
    assert!(report.final_val_loss() < 1e-8);
    let next = model.forward(&[0.0, 0.0], &[0.0], &model.new_history()).unwrap();
    assert!((next[0] - 0.25).abs() < 1e-8 && (next[1] + 1.5).abs() < 1e-8);
}

#[test]
fn train_is_deterministic() {
    let shape = raw_shape(1, 1, 0, vec![6]);
    let cfg = TrainConfig { epochs: 5, batch_size: 16, rng_seed: 42, ..Default::default() };
    let data = linear_dataset(200);
    let (a, _) = train(&shape, &data, &cfg).unwrap();
    let (b, _) = train(&shape, &data, &cfg).unwrap();
    assert_eq!(io::to_bytes(&a), io::to_bytes(&b));
}

#[test]
fn train_rejects_bad_input() {
    let shape = raw_shape(1, 1, 0, vec![]);
    let cfg = TrainConfig::default();
    assert!(matches!(train(&shape, &[], &cfg), Err(ModelError::EmptyDataset)));
    let bad = vec![TransitionSample { input: vec![f64::NAN, 0.0], target: vec![0.0] }];
    assert!(matches!(train(&shape, &bad, &cfg), Err(ModelError::NonFinite { index: 0 })));
    let short = vec![TransitionSample { input: vec![0.0], target: vec![0.0] }];
    assert!(matches!(train(&shape, &short, &cfg), Err(ModelError::Dimension { .. })));
    let bad_cfg = TrainConfig { validation_fraction: 1.0, ..Default::default() };
    assert!(train(&shape, &linear_dataset(10), &bad_cfg).is_err());
}

#[test]
fn file_round_trip_is_bit_exact() {
    let shape = ModelShape {
        n_x: 3,
        n_u: 2,
        history_len: 2,
        state_features: vec![FeatureKind::Ignored, FeatureKind::Angle, FeatureKind::Raw],
        hidden: vec![7, 5],
    };
    let m = DynamicsModel::random(shape, 99).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toastnn");
    save(&m, &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back, m);
    let h = warm_history(&m, 0.9);
    for i in 0..10 {
        let x = [i as f64, (i as f64).sin() * 3.0, -0.1 * i as f64];
        let u = [0.2 * i as f64, -1.0];
        let a = m.forward(&x, &u, &h).unwrap();
        let b = back.forward(&x, &u, &h).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn load_rejects_bad_magic() {
    let m = DynamicsModel::random(raw_shape(2, 1, 1, vec![3]), 1).unwrap();
    let mut bytes = io::to_bytes(&m);
    bytes[0] = b'X';
    assert!(matches!(io::from_bytes(&bytes), Err(ModelError::Format(_))));
}

#[test]
fn load_rejects_dimension_payload_disagreement() {
    let m = DynamicsModel::random(raw_shape(2, 1, 1, vec![3]), 1).unwrap();
    let mut bytes = io::to_bytes(&m);
    // hidden size lives right after magic + 6 header words + first size word
    let off = 8 + 6 * 4 + 4;
    bytes[off..off + 4].copy_from_slice(&4u32.to_le_bytes());
    assert!(matches!(io::from_bytes(&bytes), Err(ModelError::Dimension { .. })));
}

#[test]
fn load_rejects_truncation_and_version() {
    let m = DynamicsModel::random(raw_shape(2, 1, 1, vec![3]), 1).unwrap();
    let bytes = io::to_bytes(&m);
    assert!(matches!(io::from_bytes(&bytes[..bytes.len() - 3]), Err(ModelError::Truncated(_))));
    assert!(matches!(io::from_bytes(&bytes[..20]), Err(ModelError::Truncated(_))));
    let mut v2 = bytes.clone();
    v2[8..12].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(io::from_bytes(&v2), Err(ModelError::Version(2))));
}
