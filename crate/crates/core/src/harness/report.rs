use anyhow::{ensure, Context, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, Mode, ModelSourceKind};
use super::episode::{run_episode, MetricsReport};
use crate::environments::{fmt_f64, EpisodeLog};
use crate::nn_dynamics::{self, DynamicsModel};

/// Results of running several modes over several seeds.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// Row-major over `(mode, seed)`.
    pub reports: Vec<MetricsReport>,
    pub logs: Vec<EpisodeLog>,
    pub config_hash: String,
}

/// Runs every `(config, seed)` pair. Configs must differ only in mode.
pub fn compare(configs: &[ExperimentConfig], seeds: &[u64], model: &DynamicsModel) -> Result<Comparison> {
    ensure!(!configs.is_empty() && !seeds.is_empty(), "compare needs at least one config and one seed");
    let reference = configs[0].with_mode(Mode::Toast);
    for c in configs {
        ensure!(c.with_mode(Mode::Toast) == reference, "compared configs may differ only in mode");
    }
    let mut out = Comparison {
        modes: configs.iter().map(|c| c.mode).collect(),
        seeds: seeds.to_vec(),
        reports: Vec::new(),
        logs: Vec::new(),
        config_hash: configs[0].hash(),
    };
    for c in configs {
        for &seed in seeds {
            let (log, report) =
                run_episode(c, model, seed).with_context(|| format!("mode {} seed {seed}", c.mode.as_str()))?;
            out.logs.push(log);
            out.reports.push(report);
        }
    }
    Ok(out)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, s)
}

type Metric = (&'static str, fn(&MetricsReport) -> f64);

const METRICS: [Metric; 7] = [
    ("rms_tracking", |r| r.rms_tracking),
    ("mean_cost", |r| r.mean_cost),
    ("chattering", |r| r.chattering),
    ("recovery_time", |r| r.recovery_time),
    ("max_deviation", |r| r.max_deviation),
    ("final_deviation", |r| r.final_deviation),
    ("max_feedback", |r| r.max_feedback),
];

impl Comparison {
    pub fn report(&self, mode_index: usize, seed_index: usize) -> &MetricsReport {
        &self.reports[mode_index * self.seeds.len() + seed_index]
    }

    pub fn reports_for(&self, mode: Mode) -> Vec<&MetricsReport> {
        self.reports.iter().filter(|r| r.mode == mode).collect()
    }

    /// Seeds on which `a` has a strictly lower value of the metric than `b`.
    pub fn wins(&self, a: Mode, b: Mode, metric: fn(&MetricsReport) -> f64) -> usize {
        let (ra, rb) = (self.reports_for(a), self.reports_for(b));
        ra.iter().zip(&rb).filter(|(x, y)| metric(x) < metric(y)).count()
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = format!("# config_hash={}\n{}\n", self.config_hash, MetricsReport::CSV_COLUMNS);
        for r in &self.reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    /// Mean ± stddev per metric and mode, pairwise win counts, failures and
    /// planner timing.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config hash: {}", self.config_hash);
        let _ = writeln!(s, "seeds: {:?}", self.seeds);
        let mut distinct: Vec<Mode> = Vec::new();
        for m in &self.modes {
            if !distinct.contains(m) {
                distinct.push(*m);
            }
        }
        for (name, f) in METRICS {
            let _ = writeln!(s, "\n{name}");
            for (mi, m) in self.modes.iter().enumerate() {
                let v: Vec<f64> = (0..self.seeds.len()).map(|si| f(self.report(mi, si))).collect();
                let (mean, sd) = mean_std(&v);
                let _ = writeln!(s, "  {:<10} {} ± {} (n = {})", m.as_str(), fmt_f64(mean), fmt_f64(sd), v.len());
            }
        }
        if distinct.len() > 1 {
            let _ = writeln!(s, "\nper-seed wins (strictly lower value)");
            for (name, f) in
                METRICS.iter().filter(|(n, _)| matches!(*n, "rms_tracking" | "max_deviation" | "chattering"))
            {
                for a in &distinct {
                    for b in &distinct {
                        if a != b {
                            let _ = writeln!(
                                s,
                                "  {name}: {} beats {} on {}/{} seeds",
                                a.as_str(),
                                b.as_str(),
                                self.wins(*a, *b, *f),
                                self.seeds.len()
                            );
                        }
                    }
                }
            }
        }
        let failed: Vec<String> = self
            .reports
            .iter()
            .filter_map(|r| r.failed.as_ref().map(|f| format!("{} seed {}: {f}", r.mode.as_str(), r.seed)))
            .collect();
        let _ = writeln!(s, "\nfailed episodes: {}", failed.len());
        for f in failed {
            let _ = writeln!(s, "  {f}");
        }
        let _ = writeln!(s, "\nplanner wall time per update [ms]");
        for (mi, m) in self.modes.iter().enumerate() {
            let v: Vec<f64> = (0..self.seeds.len()).map(|si| self.report(mi, si).planner_ms).collect();
            let (mean, sd) = mean_std(&v);
            let _ = writeln!(s, "  {:<10} {:.2} ± {:.2}", m.as_str(), mean, sd);
        }
        s
    }

    /// Writes `<mode>/episode_<seed>.csv`, `metrics.csv` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for log in &self.logs {
            let sub = dir.join(&log.mode);
            create_dir(&sub)?;
            let p = sub.join(format!("episode_{}.csv", log.seed));
            write_file(&p, &log.to_csv_string())?;
            written.push(p);
        }
        let p = dir.join("metrics.csv");
        write_file(&p, &self.metrics_csv())?;
        written.push(p);
        let p = dir.join("summary.txt");
        write_file(&p, &self.summary())?;
        written.push(p);
        Ok(written)
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Files produced by a pipeline run, or the stages a dry run would execute.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub stages: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl std::fmt::Display for Manifest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for s in &self.stages {
            writeln!(f, "stage  {s}")?;
        }
        for p in &self.files {
            writeln!(f, "wrote  {}", p.display())?;
        }
        Ok(())
    }
}

/// collect → train → save model → compare → write reports. With `dry_run`
/// only validates and lists the stages.
pub fn pipeline(cfg: &ExperimentConfig, out: &Path, dry_run: bool) -> Result<Manifest> {
    cfg.validate().context("stage config")?;
    let mut m = Manifest::default();
    let train = cfg.model.source == ModelSourceKind::Train;
    if train {
        let c = &cfg.model.collect;
        m.stages.push(format!("collect: {} episodes x {} steps ({:?})", c.episodes, c.steps, c.policy));
        m.stages.push(format!("train: {} epochs, hidden {:?}", cfg.model.train.epochs, cfg.model.hidden));
    } else {
        m.stages.push(format!("load model: {}", cfg.model.path));
    }
    m.stages.push(format!("save model: {}", out.join("model.toastnn").display()));
    let modes: Vec<&str> = cfg.compare_modes.iter().map(|m| m.as_str()).collect();
    m.stages.push(format!("compare: modes {modes:?} over seeds {:?}", cfg.seeds));
    m.stages.push(format!("write reports: {}", out.display()));
    if dry_run {
        return Ok(m);
    }

    create_dir(out).context("stage setup")?;
    let cfg_path = out.join("effective_config.toml");
    write_file(&cfg_path, &cfg.dump()).context("stage setup")?;
    m.files.push(cfg_path);
    let model = if train {
        let data = super::collect(cfg).context("stage collect")?;
        let (model, report) = super::train_model(cfg, &data).context("stage train")?;
        let p = out.join("training.csv");
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (i, (a, b)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
            let _ = writeln!(s, "{},{},{}", i + 1, fmt_f64(*a), fmt_f64(*b));
        }
        write_file(&p, &s).context("stage train")?;
        m.files.push(p);
        model
    } else {
        nn_dynamics::load(Path::new(&cfg.model.path))
            .with_context(|| format!("stage load model: {}", cfg.model.path))?
    };
    let model_path = out.join("model.toastnn");
    nn_dynamics::save(&model, &model_path).with_context(|| format!("stage save model: {}", model_path.display()))?;
    m.files.push(model_path);
    let configs: Vec<ExperimentConfig> = cfg.compare_modes.iter().map(|mode| cfg.with_mode(*mode)).collect();
    let cmp = compare(&configs, &cfg.seeds, &model).context("stage compare")?;
    m.files.extend(cmp.write(out).context("stage write reports")?);
    if cmp.reports.iter().any(|r| r.failed.is_some()) {
        eprintln!("warning: some episodes failed; see summary.txt");
    }
    Ok(m)
}
