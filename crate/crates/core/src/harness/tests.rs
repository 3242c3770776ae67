use super::*;
use crate::environments::{Disturbance, DisturbanceKind, EpisodeLog};
use crate::nn_dynamics::DynamicsModel;
use std::sync::OnceLock;

fn small(extra: &str) -> ExperimentConfig {
    let text = format!(
        "preset = \"linear\"\nseeds = [0]\n{extra}\n[planner]\nsamples = 32\nhorizon = 8\n[model.collect]\nepisodes = 20\nsteps = 40\n"
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

fn zero_model(cfg: &ExperimentConfig) -> DynamicsModel {
    DynamicsModel::zeros(cfg.model_shape()).unwrap()
}

// Linear network fitted to the linear plant; shared across tests.
fn fitted_model() -> &'static DynamicsModel {
    static MODEL: OnceLock<DynamicsModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut cfg = small("");
        cfg.model.hidden = vec![];
        cfg.model.train.epochs = 300;
        cfg.model.train.learning_rate = 1e-2;
        let data = collect(&cfg).unwrap();
        train_model(&cfg, &data).unwrap().0
    })
}

#[test]
fn preset_round_trips_through_toml() {
    for name in ["pendulum", "cartpole", "vehicle", "linear"] {
        let p = ExperimentConfig::preset(name).unwrap();
        let parsed = ExperimentConfig::from_toml_str(&format!("preset = \"{name}\"")).unwrap();
        assert_eq!(parsed, p);
        let again = ExperimentConfig::from_toml_str(&p.to_toml()).unwrap();
        assert_eq!(again, p);
        assert_eq!(again.hash(), p.hash());
    }
}

#[test]
fn user_values_merge_over_preset() {
    let c = ExperimentConfig::from_toml_str(
        "preset = \"pendulum\"\nn_fast = 4\n[planner]\nsamples = 100\n[tracking]\nq = [1.0, 2.0]",
    )
    .unwrap();
    let p = ExperimentConfig::preset("pendulum").unwrap();
    assert_eq!(c.n_fast, 4);
    assert_eq!(c.planner.samples, 100);
    assert_eq!(c.planner.horizon, p.planner.horizon);
    assert_eq!(c.tracking.q, vec![1.0, 2.0]);
    assert_eq!(c.tracking.r, p.tracking.r);
    assert!((c.planner_dt() - 0.04).abs() < 1e-15);
    assert_ne!(c.hash(), p.hash());
}

#[test]
fn schema_violations_are_rejected() {
    let bad = [
        "n_fast = 5",
        "preset = \"rocket\"",
        "preset = \"linear\"\nspeed = 3",
        "preset = \"linear\"\n[planner]\nsamplez = 3",
        "preset = \"linear\"\nn_fast = 0",
        "preset = \"linear\"\nmode = \"fast\"",
        "preset = \"linear\"\nfast_dt = -0.1",
        "preset = \"linear\"\n[tracking]\nr = [0.0]",
        "preset = \"linear\"\ninitial_state = [1.0]",
        "preset = \"linear\"\n[task]\nkind = \"path\"",
        "not toml [",
    ];
    for text in bad {
        assert!(ExperimentConfig::from_toml_str(text).is_err(), "accepted {text:?}");
    }
}

#[test]
fn dump_carries_hash() {
    let c = small("");
    let d = c.dump();
    let first = d.lines().next().unwrap();
    assert_eq!(first, format!("# sha256 {}", c.hash()));
    assert_eq!(c.hash().len(), 64);
    assert_eq!(ExperimentConfig::from_toml_str(&d).unwrap(), c);
}

#[test]
fn episode_counts_steps_and_plans() {
    let mut c = small("episode_length = 10.0");
    c.mode = Mode::Toast;
    let (log, r) = run_episode(&c, &zero_model(&c), 0).unwrap();
    assert_eq!(log.records.len(), 1000);
    assert_eq!(r.fast_steps, 1000);
    assert_eq!(r.plans, 200);
    let knots: Vec<usize> = log.records.iter().enumerate().filter(|(_, s)| s.replanned).map(|(i, _)| i).collect();
    assert_eq!(knots.len(), 200);
    assert!(knots.iter().all(|k| k % 5 == 0));

    c.mode = Mode::MppiOnly;
    let (log, r) = run_episode(&c, &zero_model(&c), 0).unwrap();
    assert_eq!(log.records.len(), 200);
    assert_eq!(r.fast_steps, 1000);
    assert_eq!(r.plans, 200);
}

fn step_disturbed(extra: &str) -> ExperimentConfig {
    let mut c = small(extra);
    c.episode_length = 3.0;
    c.disturbances =
        vec![Disturbance { kind: DisturbanceKind::Step, channel: 0, magnitude: 1.0, t_start: 1.0, t_end: 2.0 }];
    c
}

#[test]
fn zoh_and_toast_agree_until_feedback_acts() {
    let c = step_disturbed("");
    let model = fitted_model();
    let (zoh, _) = run_episode(&c.with_mode(Mode::ZohMppi), model, 3).unwrap();
    let (toast, _) = run_episode(&c.with_mode(Mode::Toast), model, 3).unwrap();
    let first = toast.records.iter().position(|r| r.feedback.iter().any(|v| *v != 0.0)).unwrap();
    assert!(first > 0);
    for (a, b) in zoh.records.iter().zip(&toast.records).take(first) {
        assert_eq!(a.state, b.state);
        assert_eq!(a.action, b.action);
        assert_eq!(a.feedforward, b.feedforward);
    }
    // the step disturbance drives the two apart
    let end = zoh.records.last().unwrap();
    assert_ne!(end.state, toast.records.last().unwrap().state);
}

#[test]
fn first_plan_is_shared_across_modes() {
    let c = step_disturbed("");
    let model = fitted_model();
    let (slow, _) = run_episode(&c.with_mode(Mode::MppiOnly), model, 4).unwrap();
    let (toast, _) = run_episode(&c.with_mode(Mode::Toast), model, 4).unwrap();
    assert_eq!(slow.records[0].feedforward, toast.records[0].feedforward);
    assert_eq!(slow.records[0].state, toast.records[0].state);
}

#[test]
fn applied_action_decomposes() {
    let c = step_disturbed("");
    let (log, r) = run_episode(&c.with_mode(Mode::Toast), fitted_model(), 1).unwrap();
    for rec in &log.records {
        if !rec.clamped {
            let sum: Vec<f64> = rec.feedforward.iter().zip(&rec.feedback).map(|(a, b)| a + b).collect();
            assert_eq!(sum, rec.action);
        }
    }
    let values = [
        r.rms_tracking,
        r.mean_cost,
        r.chattering,
        r.recovery_time,
        r.max_deviation,
        r.final_deviation,
        r.max_feedback,
    ];
    assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0), "{values:?}");
    assert!(r.failed.is_none());
}

#[test]
fn compute_delay_activates_plans_one_step_late() {
    let mut c = step_disturbed("");
    c.mode = Mode::ZohMppi;
    let model = fitted_model();
    let (now, _) = run_episode(&c, model, 2).unwrap();
    c.compute_delay = true;
    let (late, _) = run_episode(&c, model, 2).unwrap();
    for k in 0..5 {
        assert_eq!(late.records[k].feedforward, now.records[k].feedforward);
    }
    // the plan computed at step 5 drives step 6 instead
    assert_ne!(late.records[5].feedforward, now.records[5].feedforward);
    assert_eq!(late.records[6].feedforward, now.records[5].feedforward);
}

fn csv(log: &EpisodeLog) -> String {
    log.to_csv_string()
}

#[test]
fn compare_single_config_and_seed() {
    let c = step_disturbed("");
    let model = fitted_model();
    let cmp = compare(&[c.with_mode(Mode::Toast)], &[7], model).unwrap();
    let (log, report) = run_episode(&c.with_mode(Mode::Toast), model, 7).unwrap();
    assert_eq!(cmp.reports.len(), 1);
    assert_eq!(cmp.reports[0].csv_row(), report.csv_row());
    assert_eq!(csv(&cmp.logs[0]), csv(&log));
    let table = cmp.metrics_csv();
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn duplicate_mode_gives_identical_rows() {
    let c = step_disturbed("").with_mode(Mode::ZohMppi);
    let cmp = compare(&[c.clone(), c], &[5], fitted_model()).unwrap();
    assert_eq!(cmp.reports[0].csv_row(), cmp.reports[1].csv_row());
    assert_eq!(csv(&cmp.logs[0]), csv(&cmp.logs[1]));
}

#[test]
fn compare_rejects_configs_differing_beyond_mode() {
    let a = small("");
    let mut b = a.with_mode(Mode::ZohMppi);
    b.planner.samples += 1;
    assert!(compare(&[a, b], &[0], fitted_model()).is_err());
}

#[test]
fn dry_run_lists_stages_and_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let m = pipeline(&small(""), &out, true).unwrap();
    assert!(m.files.is_empty());
    let text = m.to_string();
    for stage in ["collect", "train", "save model", "compare", "write reports"] {
        assert!(text.contains(stage), "{text}");
    }
    assert!(!out.exists());
}

#[test]
fn pipeline_creates_output_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("m.toastnn");
    crate::nn_dynamics::save(fitted_model(), &model_path).unwrap();
    let mut c = step_disturbed("");
    c.model.source = ModelSourceKind::Load;
    c.model.path = model_path.display().to_string();
    let out = dir.path().join("a/b");
    pipeline(&c, &out, false).unwrap();
    for f in [
        "effective_config.toml",
        "model.toastnn",
        "metrics.csv",
        "summary.txt",
        "toast/episode_0.csv",
        "zoh_mppi/episode_0.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let out2 = dir.path().join("again");
    pipeline(&c, &out2, false).unwrap();
    for f in ["metrics.csv", "model.toastnn", "toast/episode_0.csv", "zoh_mppi/episode_0.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(out2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unwritable_output_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let model_path = dir.path().join("m.toastnn");
    crate::nn_dynamics::save(&zero_model(&small("")), &model_path).unwrap();
    let mut c = small("");
    c.model.source = ModelSourceKind::Load;
    c.model.path = model_path.display().to_string();
    let out = blocker.join("sub");
    let err = pipeline(&c, &out, false).unwrap_err();
    assert!(format!("{err:#}").contains(&out.display().to_string()), "{err:#}");
}

#[test]
fn pipeline_reports_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("");
    c.model.source = ModelSourceKind::Load;
    c.model.path = dir.path().join("missing.toastnn").display().to_string();
    let err = pipeline(&c, &dir.path().join("o"), false).unwrap_err();
    assert!(format!("{err:#}").contains("stage load model"), "{err:#}");
}
