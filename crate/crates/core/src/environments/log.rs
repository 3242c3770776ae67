use std::fmt::Write as _;
use std::io::{self, Write};

use super::EnvSpec;

/// One fast-loop step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    pub state: Vec<f64>,
    /// Action sent to the plant, after clamping.
    pub action: Vec<f64>,
    pub feedforward: Vec<f64>,
    pub feedback: Vec<f64>,
    pub clamped: bool,
    /// Additive disturbance per action channel.
    pub disturbance: Vec<f64>,
    pub friction: Option<f64>,
    pub cost: f64,
    /// Norm of the deviation from the interpolated nominal.
    pub tracking_error: f64,
    pub replanned: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeLog {
    pub env: String,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub state_names: Vec<(String, String)>,
    pub action_names: Vec<(String, String)>,
    pub records: Vec<StepRecord>,
    pub failed: Option<String>,
}

/// Shortest round-trip text, switching to exponent form for extreme magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e12).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

impl EpisodeLog {
    pub fn new(spec: &EnvSpec, mode: &str, seed: u64, config_hash: &str) -> Self {
        EpisodeLog {
            env: spec.name().to_string(),
            mode: mode.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            state_names: spec.coords().iter().map(|c| (c.name.to_string(), c.unit.to_string())).collect(),
            action_names: spec.action_names().iter().map(|(n, u)| (n.to_string(), u.to_string())).collect(),
            records: Vec::new(),
            failed: None,
        }
    }

    /// Appends a record; time stamps must strictly increase.
    pub fn push(&mut self, rec: StepRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.time > last.time, "log time stamps must increase");
        }
        self.records.push(rec);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn has_friction(&self) -> bool {
        self.env == "vehicle"
    }

    pub fn header(&self) -> (String, String) {
        let mut cols = vec!["t".to_string()];
        let mut units = vec!["t [s]".to_string()];
        for (n, u) in &self.state_names {
            cols.push(n.clone());
            units.push(format!("{n} [{u}]"));
        }
        for prefix in ["u", "ff", "fb", "dist"] {
            for (n, u) in &self.action_names {
                cols.push(format!("{prefix}_{n}"));
                units.push(format!("{prefix}_{n} [{u}]"));
            }
        }
        if self.has_friction() {
            cols.push("mu".into());
            units.push("mu [-]".into());
        }
        for (c, u) in [("clamped", "0/1"), ("replan", "0/1"), ("cost", "-"), ("tracking_error", "mixed")] {
            cols.push(c.into());
            units.push(format!("{c} [{u}]"));
        }
        (cols.join(","), units.join(", "))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let (cols, units) = self.header();
        writeln!(
            w,
            "# env={} mode={} seed={} config_hash={}{}",
            self.env,
            self.mode,
            self.seed,
            self.config_hash,
            self.failed.as_ref().map(|f| format!(" failed=\"{f}\"")).unwrap_or_default()
        )?;
        writeln!(w, "# units: {units}")?;
        writeln!(w, "{cols}")?;
        let mut line = String::new();
        for r in &self.records {
            line.clear();
            line.push_str(&fmt_f64(r.time));
            for v in r.state.iter().chain(&r.action).chain(&r.feedforward).chain(&r.feedback).chain(&r.disturbance) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            if self.has_friction() {
                let _ = write!(line, ",{}", r.friction.map(fmt_f64).unwrap_or_default());
            }
            let _ = write!(
                line,
                ",{},{},{},{}",
                r.clamped as u8,
                r.replanned as u8,
                fmt_f64(r.cost),
                fmt_f64(r.tracking_error)
            );
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}
