//! Long-form results table and run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

pub const COLUMNS: [&str; 6] = [
    "experiment",
    "fixture",
    "resolution",
    "metric",
    "value",
    "pass",
];

/// Overrides `[output] dir` when set.
pub const OUTPUT_DIR_ENV: &str = "MCKEAN_HJB_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub fixture: String,
    pub resolution: String,
    pub metric: String,
    pub value: f64,
    pub pass: bool,
}

/// Collects rows under the fixture and resolution currently in focus, so a
/// failure can be attributed to the last fixture touched.
#[derive(Debug)]
pub struct Recorder {
    pub experiment: &'static str,
    fixture: String,
    resolution: String,
    rows: Vec<Row>,
}

impl Recorder {
    pub fn new(experiment: &'static str) -> Self {
        Self {
            experiment,
            fixture: String::new(),
            resolution: String::new(),
            rows: Vec::new(),
        }
    }

    pub fn at(&mut self, fixture: impl Into<String>, resolution: impl Into<String>) {
        self.fixture = fixture.into();
        self.resolution = resolution.into();
    }

    pub fn record(&mut self, metric: impl Into<String>, value: f64, pass: bool) {
        self.rows.push(Row {
            fixture: self.fixture.clone(),
            resolution: self.resolution.clone(),
            metric: metric.into(),
            value,
            pass,
        });
    }

    /// Adds a failing row naming the error against the current fixture.
    pub fn diagnose(&mut self, error: &dyn std::fmt::Display) {
        self.record(format!("error: {error}"), f64::NAN, false);
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn all_pass(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                self.experiment,
                &r.fixture,
                &r.resolution,
                &r.metric,
                &format!("{:e}", r.value),
                if r.pass { "true" } else { "false" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn resolution(n: usize, dt: f64) -> String {
    format!("n={n};dt={dt:e}")
}

pub fn output_root(configured: &str) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(configured),
    }
}

/// Creates `<root>/<experiment>/<timestamp>`, suffixing the stamp if two runs collide.
pub fn run_dir(root: &Path, experiment: &str, stamp: &str) -> std::io::Result<PathBuf> {
    let base = root.join(experiment);
    std::fs::create_dir_all(&base)?;
    let mut dir = base.join(stamp);
    let mut k = 1;
    while dir.exists() {
        dir = base.join(format!("{stamp}-{k}"));
        k += 1;
    }
    std::fs::create_dir(&dir)?;
    Ok(dir)
}

pub struct Manifest<'a> {
    pub experiment: &'a str,
    pub config_path: &'a Path,
    pub config_sha256: &'a str,
    pub seed: u64,
    pub timestamp: &'a str,
    pub parallel: bool,
    pub all_pass: bool,
}

impl Manifest<'_> {
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tool = {}", env!("CARGO_PKG_NAME"))?;
        writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(out, "experiment = {}", self.experiment)?;
        writeln!(out, "config = {}", self.config_path.display())?;
        writeln!(out, "config_sha256 = {}", self.config_sha256)?;
        writeln!(out, "seed = {}", self.seed)?;
        writeln!(out, "parallel = {}", self.parallel)?;
        writeln!(out, "all_pass = {}", self.all_pass)?;
        writeln!(out, "timestamp = {}", self.timestamp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_carry_the_focused_fixture() {
        let mut r = Recorder::new("dpp");
        r.at("pm-one-drift", resolution(513, 1e-4));
        r.record("gap", 0.0, true);
        r.diagnose(&"boom");
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "experiment,fixture,resolution,metric,value,pass\n\
             dpp,pm-one-drift,n=513;dt=1e-4,gap,0e0,true\n\
             dpp,pm-one-drift,n=513;dt=1e-4,error: boom,NaN,false\n"
        );
        assert!(!r.all_pass());
    }

    #[test]
    fn empty_recorder_does_not_pass() {
        assert!(!Recorder::new("x").all_pass());
    }
}
