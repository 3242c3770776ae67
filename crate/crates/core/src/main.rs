use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use toast::environments::fmt_f64;
use toast::harness::{self, ExperimentConfig, MetricsReport, Mode};
use toast::nn_dynamics;

#[derive(Parser)]
#[command(name = "toast", version, about = "Sampling MPC with simultaneous TVLQR tracking on a learned model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the simulator under the exploration policy and write the dataset.
    Collect(Common),
    /// Collect data, train the dynamics model and save it.
    Train(Common),
    /// Run one closed-loop episode.
    Run(Common),
    /// Run every compared mode over every seed.
    Compare(Common),
    /// collect → train → save → compare → reports.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; its `preset` key picks the base preset. Defaults to the pendulum preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict the episode seeds to this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Controller mode; for compare and pipeline, runs only this mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Validate the config and print what would run.
    #[arg(long)]
    dry_run: bool,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::preset("pendulum")?,
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
            cfg.compare_modes = vec![m];
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.display().to_string();
        }
        cfg.validate()?;
        let out = cfg.output_path();
        Ok((cfg, out))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote  {}", path.display());
    Ok(())
}

fn prepare(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    write(&out.join("effective_config.toml"), &cfg.dump())
}

/// Loads or trains the model; a freshly trained one is saved next to the results.
fn model_for(cfg: &ExperimentConfig, out: &Path) -> Result<nn_dynamics::DynamicsModel> {
    let (model, report) = harness::obtain_model(cfg)?;
    if report.is_some() {
        let path = out.join("model.toastnn");
        nn_dynamics::save(&model, &path).with_context(|| format!("saving {}", path.display()))?;
        println!("wrote  {}", path.display());
    }
    Ok(model)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Collect(c) => {
            let (cfg, out) = c.load()?;
            println!("config hash {}", cfg.hash());
            if c.dry_run {
                print!("{}", cfg.dump());
                return Ok(());
            }
            prepare(&out, &cfg)?;
            let data = harness::collect(&cfg)?;
            let mut s = String::new();
            let (ni, nt) = (cfg.model_shape().input_dim(), cfg.model_shape().n_x);
            let cols: Vec<String> =
                (0..ni).map(|i| format!("in{i}")).chain((0..nt).map(|i| format!("target{i}"))).collect();
            let _ = writeln!(s, "{}", cols.join(","));
            for d in &data {
                let row: Vec<String> = d.input.iter().chain(&d.target).map(|v| fmt_f64(*v)).collect();
                let _ = writeln!(s, "{}", row.join(","));
            }
            write(&out.join("dataset.csv"), &s)?;
            println!("{} transitions", data.len());
        }
        Command::Train(c) => {
            let (cfg, out) = c.load()?;
            println!("config hash {}", cfg.hash());
            if c.dry_run {
                print!("{}", cfg.dump());
                return Ok(());
            }
            prepare(&out, &cfg)?;
            let data = harness::collect(&cfg).context("collecting data")?;
            let (model, report) = harness::train_model(&cfg, &data).context("training")?;
            let path = out.join("model.toastnn");
            nn_dynamics::save(&model, &path).with_context(|| format!("saving {}", path.display()))?;
            println!("wrote  {}", path.display());
            println!(
                "{} train / {} validation samples, final validation RMSE (normalized) {:.3e}",
                report.n_train,
                report.n_val,
                report.final_val_rmse()
            );
        }
        Command::Run(c) => {
            let (cfg, out) = c.load()?;
            println!("config hash {}", cfg.hash());
            let seed = cfg.seeds[0];
            if c.dry_run {
                print!("{}", cfg.dump());
                println!("would run mode {} with seed {seed}", cfg.mode.as_str());
                return Ok(());
            }
            prepare(&out, &cfg)?;
            let model = model_for(&cfg, &out)?;
            let (log, report) = harness::run_episode(&cfg, &model, seed)?;
            write(&out.join(format!("episode_{seed}.csv")), &log.to_csv_string())?;
            write(&out.join("metrics.csv"), &format!("{}\n{}\n", MetricsReport::CSV_COLUMNS, report.csv_row()))?;
            let summary = format!(
                "config hash: {}\nmode: {}\nseed: {seed}\nrms tracking: {}\nchattering: {}\nmax deviation: {}\nplanner wall time per update: {:.2} ms\nfailed: {}\n",
                cfg.hash(),
                cfg.mode.as_str(),
                fmt_f64(report.rms_tracking),
                fmt_f64(report.chattering),
                fmt_f64(report.max_deviation),
                report.planner_ms,
                report.failed.as_deref().unwrap_or("no")
            );
            write(&out.join("summary.txt"), &summary)?;
        }
        Command::Compare(c) => {
            let (cfg, out) = c.load()?;
            println!("config hash {}", cfg.hash());
            if c.dry_run {
                print!("{}", cfg.dump());
                return Ok(());
            }
            prepare(&out, &cfg)?;
            let model = model_for(&cfg, &out)?;
            let configs: Vec<ExperimentConfig> = cfg.compare_modes.iter().map(|m| cfg.with_mode(*m)).collect();
            let cmp = harness::compare(&configs, &cfg.seeds, &model)?;
            for p in cmp.write(&out)? {
                println!("wrote  {}", p.display());
            }
            print!("{}", cmp.summary());
        }
        Command::Pipeline(c) => {
            let (cfg, out) = c.load()?;
            println!("config hash {}", cfg.hash());
            let manifest = harness::pipeline(&cfg, &out, c.dry_run)?;
            print!("{manifest}");
        }
    }
    Ok(())
}
