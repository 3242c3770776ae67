use super::*;
use crate::nn_dynamics::{FeatureKind, ModelShape};
use crate::types::ActionBounds;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn undamped_pendulum(dt: f64) -> EnvSpec {
    let mut s = EnvSpec::pendulum();
    s.physics = Physics::Pendulum(PendulumParams { damping: 0.0, ..Default::default() });
    s.dt = dt;
    s
}

#[test]
fn hanging_pendulum_is_a_fixed_point() {
    let spec = undamped_pendulum(0.01);
    let none = Effect::none(1);
    let mut x = vec![PI, 0.0];
    for _ in 0..5000 {
        x = spec.step(&x, &[0.0], &none).unwrap().0;
    }
    assert_eq!(x, vec![PI, 0.0]);
}

#[test]
fn upright_cartpole_is_a_fixed_point() {
    let spec = EnvSpec::cartpole();
    let none = Effect::none(1);
    let mut x = vec![0.0; 4];
    for _ in 0..1000 {
        x = spec.step(&x, &[0.0], &none).unwrap().0;
    }
    assert!(x.iter().all(|v| *v == 0.0));
}

#[test]
fn pendulum_energy_is_conserved() {
    let spec = undamped_pendulum(0.01);
    let Physics::Pendulum(p) = &spec.physics else { unreachable!() };
    let none = Effect::none(1);
    let mut x = vec![PI / 2.0, 0.0];
    let e0 = p.energy(&x);
    let scale = p.mass * p.gravity * p.length;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        x = spec.step(&x, &[0.0], &none).unwrap().0;
        worst = worst.max((p.energy(&x) - e0).abs() / scale);
    }
    assert!(worst < 1e-6, "relative drift {worst}");
}

#[test]
fn pendulum_falls_away_from_upright() {
    let spec = EnvSpec::pendulum();
    let (x, _) = spec.step(&[0.1, 0.0], &[0.0], &Effect::none(1)).unwrap();
    assert!(x[1] > 0.0 && x[0] > 0.1);
}

#[test]
fn rk4_is_fourth_order() {
    let spec = undamped_pendulum(0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 0.02;
    for _ in 0..20 {
        let x = [rng.gen_range(-PI..PI), rng.gen_range(-3.0..3.0)];
        let u = [rng.gen_range(-2.0..2.0)];
        let reference = spec.integrate_raw(&x, &u, h, 100);
        let err = |n| {
            let y = spec.integrate_raw(&x, &u, h, n);
            ((y[0] - reference[0]).powi(2) + (y[1] - reference[1]).powi(2)).sqrt()
        };
        let ratio = err(1) / err(2);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn actions_are_clamped_and_disturbance_added() {
    let spec = EnvSpec::pendulum();
    let (_, applied) = spec.step(&[0.3, 0.0], &[100.0], &Effect::none(1)).unwrap();
    assert_eq!(applied, vec![5.0]);
    let mut e = Effect::none(1);
    e.additive[0] = 2.0;
    let (a, _) = spec.step(&[0.3, 0.0], &[1.0], &e).unwrap();
    let (b, _) = spec.step(&[0.3, 0.0], &[3.0], &Effect::none(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn step_rejects_bad_input() {
    let spec = EnvSpec::pendulum();
    assert!(matches!(spec.step(&[0.0, f64::NAN], &[0.0], &Effect::none(1)), Err(EnvError::NonFinite)));
    assert!(spec.step(&[0.0], &[0.0], &Effect::none(1)).is_err());
    assert!(spec.step(&[0.0, 0.0], &[f64::INFINITY], &Effect::none(1)).is_err());
}

#[test]
fn spec_validation() {
    for s in [EnvSpec::pendulum(), EnvSpec::cartpole(), EnvSpec::vehicle(), EnvSpec::linear()] {
        s.validate().unwrap();
        assert_eq!(s.coords().len(), s.n_x());
        assert_eq!(s.action_names().len(), s.n_u());
    }
    let mut s = EnvSpec::pendulum();
    s.dt = 0.0;
    assert!(s.validate().is_err());
    let mut s = EnvSpec::pendulum();
    s.bounds = ActionBounds::new(vec![1.0], vec![1.0]);
    assert!(s.validate().is_err());
    let mut s = EnvSpec::vehicle();
    s.physics = Physics::Vehicle(VehicleParams { friction: -1.0, ..Default::default() });
    assert!(s.validate().is_err());
}

#[test]
fn vehicle_drives_straight() {
    let spec = EnvSpec::vehicle();
    let mut x = vec![0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0];
    for _ in 0..100 {
        x = spec.step(&x, &[0.0, 0.0], &Effect::none(2)).unwrap().0;
    }
    assert!((x[0] - 10.0).abs() < 1e-9);
    assert_eq!(&x[1..3], &[0.0, 0.0]);
}

#[test]
fn steering_limit_holds() {
    let spec = EnvSpec::vehicle();
    let mut x = vec![0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.45];
    for _ in 0..50 {
        x = spec.step(&x, &[1.0, 0.0], &Effect::none(2)).unwrap().0;
        assert!(x[6] <= 0.5);
    }
}

proptest! {
    #[test]
    fn tire_forces_respect_friction(
        vx in -5.0..40.0f64, vy in -5.0..5.0f64, r in -2.0..2.0f64, d in -0.5..0.5f64, mu in 0.05..1.5f64
    ) {
        let p = VehicleParams::default();
        let (fzf, fzr) = p.axle_loads();
        let (ff, fr) = p.tire_forces(&[0.0, 0.0, 0.0, vx, vy, r, d], mu);
        prop_assert!(ff.abs() <= mu * fzf);
        prop_assert!(fr.abs() <= mu * fzr);
    }

    #[test]
    fn applied_action_within_bounds(u in -1e3..1e3f64, th in -3.0..3.0f64) {
        let spec = EnvSpec::pendulum();
        let (_, a) = spec.step(&[th, 0.0], &[u], &Effect::none(1)).unwrap();
        prop_assert!(spec.bounds.contains(&a));
    }
}

fn step_dist(mag: f64) -> Disturbance {
    Disturbance { kind: DisturbanceKind::Step, channel: 0, magnitude: mag, t_start: 1.0, t_end: 2.0 }
}

#[test]
fn injection_examples() {
    assert_eq!(inject(&step_dist(2.0), 0.5), Injection::Inactive);
    assert_eq!(inject(&step_dist(2.0), 1.5), Injection::Additive { channel: 0, value: 2.0 });
    assert_eq!(inject(&step_dist(2.0), 2.0), Injection::Inactive);
    let pulse = Disturbance {
        kind: DisturbanceKind::PulseTrain { period: 1.0, duty: 0.2 },
        channel: 0,
        magnitude: 3.0,
        t_start: 0.0,
        t_end: 10.0,
    };
    assert_eq!(inject(&pulse, 1.1), Injection::Additive { channel: 0, value: 3.0 });
    assert_eq!(inject(&pulse, 1.5), Injection::Additive { channel: 0, value: 0.0 });
    let mu = Disturbance { kind: DisturbanceKind::FrictionShift, channel: 0, magnitude: 0.6, t_start: 5.0, t_end: 1e9 };
    assert_eq!(inject(&mu, 6.0), Injection::Friction(0.6));
    let e = combined_effect(&[step_dist(2.0), step_dist(0.5), mu], 1.5, 1);
    assert_eq!(e.additive, vec![2.5]);
    assert_eq!(e.friction, None);
}

#[test]
fn random_steps_are_seeded() {
    let d = Disturbance {
        kind: DisturbanceKind::RandomSteps { hold: 0.5, seed: 4 },
        channel: 0,
        magnitude: 1.0,
        t_start: 0.0,
        t_end: 5.0,
    };
    let v = |t| match inject(&d, t) {
        Injection::Additive { value, .. } => value,
        _ => panic!(),
    };
    assert_eq!(v(0.1), v(0.4));
    assert_ne!(v(0.1), v(0.6));
    assert!((0..50).all(|k| v(k as f64 * 0.1).abs() <= 1.0));
}

#[test]
fn disturbance_validation() {
    let mut d = step_dist(1.0);
    d.t_end = 1.0;
    assert!(d.validate(1).is_err());
    let mut d = step_dist(1.0);
    d.channel = 1;
    assert!(d.validate(1).is_err());
    assert!(step_dist(1.0).validate(1).is_ok());
}

fn pendulum_shape(h: usize) -> ModelShape {
    ModelShape {
        n_x: 2,
        n_u: 1,
        history_len: h,
        state_features: vec![FeatureKind::Angle, FeatureKind::Raw],
        hidden: vec![8],
    }
}

fn collect_cfg(episodes: usize, steps: usize) -> CollectConfig {
    CollectConfig { policy: ExplorationPolicy::UniformRandom, episodes, steps, hold: 5, seed: 17, explore_bounds: None }
}

#[test]
fn dataset_counts_and_determinism() {
    let spec = EnvSpec::pendulum();
    let d = collect_dataset(&spec, &pendulum_shape(1), &collect_cfg(1, 10)).unwrap();
    assert_eq!(d.len(), 9);
    let d2 = collect_dataset(&spec, &pendulum_shape(1), &collect_cfg(1, 10)).unwrap();
    assert_eq!(d, d2);
    let d3 = collect_dataset(&spec, &pendulum_shape(2), &collect_cfg(3, 10)).unwrap();
    assert_eq!(d3.len(), 24);
}

#[test]
fn dataset_targets_match_simulator() {
    let spec = EnvSpec::pendulum();
    let shape = pendulum_shape(1);
    for policy in [ExplorationPolicy::UniformRandom, ExplorationPolicy::Sinusoidal] {
        let mut cfg = collect_cfg(2, 6);
        cfg.policy = policy;
        let data = collect_dataset(&spec, &shape, &cfg).unwrap();
        for s in &data {
            // input = [sin θ, cos θ, θ̇, sin θ', cos θ', θ̇', u, u']
            let x = [s.input[0].atan2(s.input[1]), s.input[2]];
            let u = [s.input[6]];
            assert!(spec.bounds.contains(&u));
            let mut next = x.to_vec();
            for _ in 0..cfg.hold {
                next = spec.step(&next, &u, &Effect::none(1)).unwrap().0;
            }
            assert!(crate::nn_dynamics::wrap_angle(next[0] - x[0] - s.target[0]).abs() < 1e-9);
            assert!((next[1] - x[1] - s.target[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn figure_eight_geometry() {
    let t = Track::figure_eight(20.0, 30.0, 0.1);
    let leg = (30.0f64 * 30.0 - 20.0 * 20.0).sqrt();
    let phi = (20.0f64 / 30.0).asin();
    let total = 4.0 * leg + 2.0 * 20.0 * (PI + 2.0 * phi);
    assert!((t.length() - total).abs() < 1e-9);
    let (p0, h0) = t.pose_at(0.0);
    assert!(p0[0].abs() < 1e-12 && p0[1].abs() < 1e-12);
    assert!((h0 - phi).abs() < 1e-6);
    assert!((t.start_heading() - phi).abs() < 1e-15);
    let (pm, hm) = t.pose_at(t.length() / 2.0);
    assert!(pm[0].abs() < 0.1 && pm[1].abs() < 0.1);
    assert!((hm - (PI - phi)).abs() < 1e-3);
    // every sample on a loop sits on its circle or on a crossing line
    for k in 0..t.len() {
        let (p, _) = t.pose_at(k as f64 * t.spacing);
        let on_circle = ((p[0].abs() - 30.0).hypot(p[1]) - 20.0).abs() < 1e-9;
        let on_line = (p[1].abs() - p[0].abs() * phi.tan()).abs() < 1e-9;
        assert!(on_circle || on_line, "{p:?}");
    }
    // 1 m to the left of the start, and 1 m to the right
    let left = [-phi.sin(), phi.cos()];
    let p = t.project(left, -2.0, 2.0);
    assert!((p.lateral - 1.0).abs() < 1e-2, "{p:?}");
    let p = t.project([-left[0], -left[1]], -2.0, 2.0);
    assert!((p.lateral + 1.0).abs() < 1e-2);
    // the window keeps the projection on the current branch at the crossing
    let p = t.project([0.0, 0.0], t.length() / 2.0 - 3.0, t.length() / 2.0 + 3.0);
    assert!((p.heading - (PI - phi)).abs() < 1e-3);
}

#[test]
fn csv_layout() {
    let spec = EnvSpec::pendulum();
    let mut log = EpisodeLog::new(&spec, "toast", 3, "abc");
    for k in 0..2 {
        log.push(StepRecord {
            time: k as f64 * 0.01,
            state: vec![0.5, -1.0],
            action: vec![1.0],
            feedforward: vec![0.75],
            feedback: vec![0.25],
            clamped: false,
            disturbance: vec![0.0],
            friction: None,
            cost: 1.5e-7,
            tracking_error: 0.0,
            replanned: k == 0,
        });
    }
    let csv = log.to_csv_string();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("# env=pendulum mode=toast seed=3"));
    assert!(lines[1].starts_with("# units: t [s], theta [rad]"));
    assert_eq!(
        lines[2],
        "t,theta,theta_dot,u_torque,ff_torque,fb_torque,dist_torque,clamped,replan,cost,tracking_error"
    );
    assert_eq!(lines[3], "0,0.5,-1,1,0.75,0.25,0,0,1,1.5e-7,0");
    assert_eq!(lines[2].split(',').count(), lines[4].split(',').count());
}
