//! Experiment configuration read from a TOML document.

use std::path::Path;

use mckean_hjb::fixtures::{self, FIXTURE_NAMES};
use mckean_hjb::weightspace::Grid;
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("stability: dt = {dt:e} exceeds the explicit bound {bound:e} for fixture {fixture} at h = {h:e}")]
    Stability {
        dt: f64,
        bound: f64,
        fixture: String,
        h: f64,
    },
}

/// Computational grid on `[lower, upper]`.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Default `-8`.
    pub lower: f64,
    /// Default `8`.
    pub upper: f64,
    /// Node count, default `513`.
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            lower: -8.0,
            upper: 8.0,
            n: 513,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSection {
    /// Check weighted-space membership of every saved density. Default `true`.
    pub check_membership: bool,
}

impl Default for WeightSection {
    fn default() -> Self {
        Self {
            check_membership: true,
        }
    }
}

/// Fixture used by the value-function experiments.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    /// Default `"pm-one-drift"`.
    pub fixture: String,
    /// Default `1`.
    pub horizon: f64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            fixture: "pm-one-drift".into(),
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    /// Piecewise-constant pieces `K`, default `2`.
    pub pieces: usize,
    /// PDE time step, default `1e-4`.
    pub dt: f64,
    /// Default `65536`.
    pub max_rollouts: usize,
    /// Initial density perturbation of the derivative probe, default `1e-2`.
    pub probe_epsilon: f64,
    /// Half-width of the central time difference, default `1e-2`.
    pub probe_time_step: f64,
    /// Default `1e-8`.
    pub ridge: f64,
    /// Largest accepted `|HJB residual|`, default `0.05`.
    pub residual_tolerance: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            pieces: 2,
            dt: 1e-4,
            max_rollouts: 1 << 16,
            probe_epsilon: 1e-2,
            probe_time_step: 1e-2,
            ridge: 1e-8,
            residual_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentsSection {
    /// Master seed, default `2024`.
    pub seed: u64,
    /// Particle count `N`, default `10000`.
    pub particles: usize,
    /// Euler-Maruyama step, default `1e-2`.
    pub particle_dt: f64,
    /// Length of heat and particle runs, default `0.5`.
    pub heat_horizon: f64,
    /// Random densities in the derivative suite, default `20`.
    pub derivative_trials: usize,
    /// State pairs in the continuity sweep, default `20`.
    pub continuity_pairs: usize,
    /// Random metric spaces for Borwein-Preiss, default `50`.
    pub bp_spaces: usize,
    /// Densities in the doubling dictionary, default `8`.
    pub dictionary: usize,
    /// Doubling time grid, default `[0.25, 0.5, 0.75, 1.0]` (fractions of the horizon).
    pub doubling_times: Vec<f64>,
    /// Default `[0.1, 0.01, 0.001]`.
    pub thetas: Vec<f64>,
    /// Borwein-Preiss and doubling `ε`, default `0.01`.
    pub eps: f64,
}

impl Default for ExperimentsSection {
    fn default() -> Self {
        Self {
            seed: 2024,
            particles: 10_000,
            particle_dt: 1e-2,
            heat_horizon: 0.5,
            derivative_trials: 20,
            continuity_pairs: 20,
            bp_spaces: 50,
            dictionary: 8,
            doubling_times: vec![0.25, 0.5, 0.75, 1.0],
            thetas: vec![0.1, 0.01, 0.001],
            eps: 0.01,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Default `"results"`, relative to the working directory.
    pub dir: String,
    /// Also write density paths as `(t, x, value)` CSV. Default `false`.
    pub save_paths: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "results".into(),
            save_paths: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub weight: WeightSection,
    pub problem: ProblemSection,
    pub search: SearchSection,
    pub experiments: ExperimentsSection,
    pub output: OutputSection,
}

/// A validated config together with the hash of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let config = parse(&text)?;
    let sha256 = Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(LoadedConfig { config, sha256 })
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!(
            "{name} = {v} must be positive"
        )))
    }
}

fn in_unit(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!(
            "{name} = {v} must lie in (0, 1)"
        )))
    }
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.grid.lower, self.grid.upper, self.grid.n)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let grid = self.grid()?;
        let (s, e) = (&self.search, &self.experiments);
        positive("problem.horizon", self.problem.horizon)?;
        positive("search.dt", s.dt)?;
        positive("search.probe_epsilon", s.probe_epsilon)?;
        positive("search.probe_time_step", s.probe_time_step)?;
        positive("search.ridge", s.ridge)?;
        positive("search.residual_tolerance", s.residual_tolerance)?;
        positive("experiments.particle_dt", e.particle_dt)?;
        positive("experiments.heat_horizon", e.heat_horizon)?;
        in_unit("experiments.eps", e.eps)?;
        if s.pieces == 0 {
            return Err(ConfigError::Invalid(
                "search.pieces must be at least 1".into(),
            ));
        }
        if 2.0 * s.probe_time_step >= 0.2 * self.problem.horizon {
            return Err(ConfigError::Invalid(format!(
                "search.probe_time_step = {} is too wide for horizon {}",
                s.probe_time_step, self.problem.horizon
            )));
        }
        if e.particles < 10 {
            return Err(ConfigError::Invalid(
                "experiments.particles must be at least 10".into(),
            ));
        }
        for (name, v) in [
            ("experiments.derivative_trials", e.derivative_trials),
            ("experiments.continuity_pairs", e.continuity_pairs),
            ("experiments.bp_spaces", e.bp_spaces),
            ("experiments.dictionary", e.dictionary),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if e.thetas.is_empty() || e.thetas.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(ConfigError::Invalid(
                "experiments.thetas must be a non-empty list in (0, 1)".into(),
            ));
        }
        let times = &e.doubling_times;
        if times.last() != Some(&1.0)
            || times.windows(2).any(|w| w[0] >= w[1])
            || times.iter().any(|t| *t <= 0.0)
        {
            return Err(ConfigError::Invalid(
                "experiments.doubling_times must increase within (0, 1] and end at 1".into(),
            ));
        }

        let spec =
            fixtures::by_name(&self.problem.fixture, self.problem.horizon).ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown fixture {:?}; expected one of {}",
                    self.problem.fixture,
                    FIXTURE_NAMES.join(", ")
                ))
            })?;
        let rollouts = spec.atoms.len().checked_pow(s.pieces as u32);
        if rollouts.is_none_or(|r| r > s.max_rollouts) {
            return Err(ConfigError::Invalid(format!(
                "{} atoms over {} pieces exceeds search.max_rollouts = {}",
                spec.atoms.len(),
                s.pieces,
                s.max_rollouts
            )));
        }
        let heat = fixtures::zero_drift(1.0, e.heat_horizon);
        for spec in [&spec, &heat] {
            let bound = spec.stability_bound(grid.h(), spec.bounds.k2);
            if s.dt > bound {
                return Err(ConfigError::Stability {
                    dt: s.dt,
                    bound,
                    fixture: spec.name.clone(),
                    h: grid.h(),
                });
            }
        }
        Ok(())
    }
}
