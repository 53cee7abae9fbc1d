//! Euler-Maruyama simulation of the controlled McKean-Vlasov SDE.
//!
//! Each particle owns a ChaCha8 stream keyed by `(seed, index)`, so results
//! do not depend on how rayon schedules the work.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::fokker_planck::substeps;
use super::problem::{ControlLaw, PolicySchedule, ProblemSpec};
use crate::densities::{kde_values, quantile_from_cdf, GridDensity, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::weightspace::Grid;

/// Particles in `ℝ^dim` with one random stream each.
pub struct ParticleSystem {
    positions: Vec<f64>,
    dim: usize,
    seed: u64,
    rngs: Vec<ChaCha8Rng>,
}

impl ParticleSystem {
    /// `init` writes the starting point of particle `i` using its own stream.
    pub fn new<F>(n: usize, dim: usize, seed: u64, init: F) -> Self
    where
        F: Fn(usize, &mut ChaCha8Rng, &mut [f64]) + Sync,
    {
        let mut rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64);
                r
            })
            .collect();
        let mut positions = vec![0.0; n * dim];
        positions
            .par_chunks_mut(dim)
            .zip(rngs.par_iter_mut())
            .enumerate()
            .for_each(|(i, (p, r))| init(i, r, p));
        Self {
            positions,
            dim,
            seed,
            rngs,
        }
    }

    pub fn len(&self) -> usize {
        self.rngs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rngs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Draws one value per particle from its own stream.
    pub fn draw<T, F>(&mut self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &[f64], &mut ChaCha8Rng) -> T + Sync,
    {
        self.positions
            .par_chunks(self.dim)
            .zip(self.rngs.par_iter_mut())
            .enumerate()
            .map(|(i, (p, r))| f(i, p, r))
            .collect()
    }

    /// `X ← X + b dt + σ √dt ξ`, reflecting each coordinate into `bounds`.
    pub fn advance(
        &mut self,
        drift: &[f64],
        dt: f64,
        sigma: f64,
        bounds: Option<(f64, f64)>,
    ) -> Result<()> {
        if drift.len() != self.positions.len() {
            return Err(Error::LengthMismatch {
                expected: self.positions.len(),
                got: drift.len(),
            });
        }
        let scale = sigma * dt.sqrt();
        let dim = self.dim;
        self.positions
            .par_chunks_mut(dim)
            .zip(drift.par_chunks(dim))
            .zip(self.rngs.par_iter_mut())
            .for_each(|((p, b), r)| {
                for (x, bk) in p.iter_mut().zip(b) {
                    let xi: f64 = r.sample(StandardNormal);
                    *x += bk * dt + scale * xi;
                    if let Some((lo, hi)) = bounds {
                        if *x > hi {
                            *x = 2.0 * hi - *x;
                        }
                        if *x < lo {
                            *x = 2.0 * lo - *x;
                        }
                        *x = x.clamp(lo, hi);
                    }
                }
            });
        if let Some(k) = self.positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "position of particle {}",
                k / dim
            )));
        }
        Ok(())
    }

    pub fn into_ensemble(self) -> Result<ParticleEnsemble> {
        ParticleEnsemble::new(self.positions, self.dim, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleConfig {
    pub dt: f64,
    /// KDE bandwidth for the mean-field density; Silverman's rule when `None`.
    pub bandwidth: Option<f64>,
}

impl ParticleConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            bandwidth: None,
        }
    }
}

fn silverman(points: &[f64]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().sum::<f64>() / n;
    let var = points.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

/// KDE of `points` on `grid`, renormalized.
fn field_density(points: &[f64], bandwidth: Option<f64>, grid: &Grid) -> Result<GridDensity> {
    let bw = bandwidth.unwrap_or_else(|| silverman(points));
    if !(bw > 0.0 && bw.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "degenerate KDE bandwidth {bw}"
        )));
    }
    let values = kde_values(points, bw, grid);
    let mass = grid.integrate(&values);
    if !(mass > 0.0) {
        return Err(Error::InvalidDensity("ensemble left the grid".into()));
    }
    Ok(GridDensity::from_values_unchecked(
        *grid,
        values.into_iter().map(|v| v / mass).collect(),
    ))
}

fn sample_atom(weights: &[f64], r: &mut ChaCha8Rng) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Simulates `n_field` particles drawn from `rho0` plus optional tracers
/// started at fixed points. The mean-field density fed to the drift is the
/// KDE of the field particles only. Returns the field system and the tracer
/// positions.
pub(crate) fn simulate_with_tracers(
    rho0: &GridDensity,
    s: f64,
    t: f64,
    policy: &PolicySchedule,
    spec: &ProblemSpec,
    n_field: usize,
    tracers: &[f64],
    seed: u64,
    cfg: &ParticleConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    if n_field < ParticleEnsemble::MIN_PARTICLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {} particles, got {n_field}",
            ParticleEnsemble::MIN_PARTICLES
        )));
    }
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt = {}", cfg.dt)));
    }
    if !(t > s) {
        return Err(Error::InvalidArgument(format!(
            "need s < t, got s = {s}, t = {t}"
        )));
    }
    if !policy.covers(s, t) {
        return Err(Error::InvalidControl(format!(
            "policy does not cover [{s}, {t}]"
        )));
    }
    let grid = *rho0.grid();
    policy.check(spec.atoms.len(), &grid)?;

    let cdf = rho0.cdf();
    let total = *cdf.last().unwrap();
    let mut sys = ParticleSystem::new(n_field + tracers.len(), 1, seed, |i, r, p| {
        p[0] = if i < n_field {
            quantile_from_cdf(&grid, &cdf, r.random::<f64>() * total)
        } else {
            tracers[i - n_field]
        };
    });
    let bounds = Some((grid.lower(), grid.upper()));
    let n_atoms = spec.atoms.len();
    let mut drift = vec![0.0; sys.len()];
    for (a, b, law) in policy.segments(s, t) {
        let m = substeps(a, b, cfg.dt);
        let tau = (b - a) / m as f64;
        for k in 0..m {
            let now = a + k as f64 * tau;
            let rho = if spec.drift.uses_density() {
                field_density(&sys.positions()[..n_field], cfg.bandwidth, &grid)?
            } else {
                rho0.clone()
            };
            if !spec.drift.uses_control() {
                spec.drift
                    .eval_many(now, sys.positions(), &rho, &spec.atoms[0], &mut drift);
            } else {
                let choice = match law {
                    ControlLaw::Relaxed(alpha) => match alpha.as_pure() {
                        Some(j) => vec![j; sys.len()],
                        None => sys.draw(|_, _, r| sample_atom(alpha.weights(), r)),
                    },
                    ControlLaw::Feedback(_) => {
                        sys.draw(|_, p, r| sample_atom(law.row(grid.cell_of(p[0])).weights(), r))
                    }
                };
                for j in 0..n_atoms {
                    let idx: Vec<usize> = (0..sys.len()).filter(|&i| choice[i] == j).collect();
                    if idx.is_empty() {
                        continue;
                    }
                    let xs: Vec<f64> = idx.iter().map(|&i| sys.positions()[i]).collect();
                    let mut out = vec![0.0; xs.len()];
                    spec.drift
                        .eval_many(now, &xs, &rho, &spec.atoms[j], &mut out);
                    for (&i, v) in idx.iter().zip(out) {
                        drift[i] = v;
                    }
                }
            }
            if let Some(i) = drift.iter().position(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "drift of particle {i} at t = {now}"
                )));
            }
            sys.advance(&drift, tau, spec.sigma, bounds)?;
        }
    }
    let mut field = sys.positions;
    let tr = field.split_off(n_field);
    Ok((field, tr))
}

/// Simulates the McKean-Vlasov SDE with `n` particles from `rho0` over
/// `[s, t]`. Deterministic given `seed`.
pub fn particle_simulate(
    rho0: &GridDensity,
    s: f64,
    t: f64,
    policy: &PolicySchedule,
    spec: &ProblemSpec,
    n: usize,
    seed: u64,
    cfg: &ParticleConfig,
) -> Result<ParticleEnsemble> {
    let (field, _) = simulate_with_tracers(rho0, s, t, policy, spec, n, &[], seed, cfg)?;
    ParticleEnsemble::new(field, 1, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckConfig {
    pub dt: f64,
    pub field_particles: usize,
    pub tracers_per_start: usize,
    pub seed: u64,
    /// Quantiles of `rho0` used as point starts.
    pub start_quantiles: Vec<f64>,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            field_particles: 2000,
            tracers_per_start: 20000,
            seed: 7,
            start_quantiles: vec![0.25, 0.5, 0.75],
        }
    }
}

/// Least-squares fit `log p̂ = a − c d²/τ` for one point start.
#[derive(Debug, Clone, PartialEq)]
pub struct StartFit {
    pub start: f64,
    pub a: f64,
    pub c: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBoundReport {
    pub kappa1: f64,
    pub kappa2: f64,
    /// Largest relative excursion of the estimated kernel outside the envelopes.
    pub max_violation: f64,
    pub fits: Vec<StartFit>,
    pub degenerate: bool,
    pub pass: bool,
}

pub const ENVELOPE_TOLERANCE: f64 = 0.05;

struct Sample {
    d2: f64,
    p: f64,
}

/// Fits the two-sided Gaussian envelope
/// `κ₁⁻¹τ^{-1/2}e^{−d²/(κ₂τ)} ≤ p ≤ κ₁τ^{-1/2}e^{−κ₂d²/τ}` to transition
/// densities estimated from tracer clouds started at points.
pub fn gaussian_bound_check(
    rho0: &GridDensity,
    policy: &PolicySchedule,
    spec: &ProblemSpec,
    t: f64,
    cfg: &BoundCheckConfig,
) -> Result<GaussianBoundReport> {
    let s = policy.start();
    let tau = t - s;
    let grid = *rho0.grid();
    if cfg.tracers_per_start < ParticleEnsemble::MIN_PARTICLES {
        return Err(Error::InvalidArgument("too few tracers per start".into()));
    }
    let starts: Vec<f64> = cfg
        .start_quantiles
        .iter()
        .map(|&q| rho0.quantile(q))
        .collect();
    let tracers: Vec<f64> = starts
        .iter()
        .flat_map(|&x| std::iter::repeat_n(x, cfg.tracers_per_start))
        .collect();
    let (_, end) = simulate_with_tracers(
        rho0,
        s,
        t,
        policy,
        spec,
        cfg.field_particles,
        &tracers,
        cfg.seed,
        &ParticleConfig::new(cfg.dt),
    )?;

    let mut fits = Vec::new();
    let mut fit_region = Vec::new();
    let mut check_region = Vec::new();
    let mut degenerate = false;
    for (k, &x0) in starts.iter().enumerate() {
        let cloud = &end[k * cfg.tracers_per_start..(k + 1) * cfg.tracers_per_start];
        let est = field_density(cloud, None, &grid)?;
        let cdf = est.cdf();
        let (f_lo, f_hi) = (
            quantile_from_cdf(&grid, &cdf, 0.05),
            quantile_from_cdf(&grid, &cdf, 0.95),
        );
        let (c_lo, c_hi) = (
            quantile_from_cdf(&grid, &cdf, 0.01),
            quantile_from_cdf(&grid, &cdf, 0.99),
        );
        let mut local = Vec::new();
        for (i, &p) in est.values().iter().enumerate() {
            let y = grid.node(i);
            if p <= 0.0 {
                continue;
            }
            let d2 = (y - x0) * (y - x0);
            if y >= f_lo && y <= f_hi {
                local.push(Sample { d2, p });
            }
            if y >= c_lo && y <= c_hi {
                check_region.push(Sample { d2, p });
            }
        }
        // log p = a − c·(d²/τ)
        let m = local.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for smp in &local {
            let xv = smp.d2 / tau;
            let yv = smp.p.ln();
            sx += xv;
            sy += yv;
            sxx += xv * xv;
            sxy += xv * yv;
        }
        let den = m * sxx - sx * sx;
        let (a, c) = if local.len() >= 5 && den.abs() > 1e-300 {
            let slope = (m * sxy - sx * sy) / den;
            ((sy - slope * sx) / m, -slope)
        } else {
            (f64::NAN, f64::NAN)
        };
        if !(c.is_finite() && c > 0.0) {
            degenerate = true;
        }
        fits.push(StartFit {
            start: x0,
            a,
            c,
            points: local.len(),
        });
        fit_region.extend(local);
    }

    let c_pool: Vec<f64> = fits
        .iter()
        .map(|f| f.c)
        .filter(|c| c.is_finite() && *c > 0.0)
        .collect();
    if c_pool.is_empty() {
        return Ok(GaussianBoundReport {
            kappa1: f64::NAN,
            kappa2: f64::NAN,
            max_violation: f64::INFINITY,
            fits,
            degenerate: true,
            pass: false,
        });
    }
    let c_mean = c_pool.iter().sum::<f64>() / c_pool.len() as f64;
    let kappa2 = c_mean.min(1.0 / c_mean);
    let sqrt_tau = tau.sqrt();
    let upper = |k1: f64, d2: f64| k1 / sqrt_tau * (-kappa2 * d2 / tau).exp();
    let lower = |k1: f64, d2: f64| (-d2 / (kappa2 * tau)).exp() / (k1 * sqrt_tau);
    let kappa1 = fit_region
        .iter()
        .map(|smp| {
            let up = smp.p * sqrt_tau * (kappa2 * smp.d2 / tau).exp();
            let low = (-smp.d2 / (kappa2 * tau)).exp() / (smp.p * sqrt_tau);
            up.max(low)
        })
        .fold(1.0f64, f64::max);
    let max_violation = check_region
        .iter()
        .map(|smp| {
            let u = upper(kappa1, smp.d2);
            let l = lower(kappa1, smp.d2);
            ((smp.p - u) / u).max((l - smp.p) / l).max(0.0)
        })
        .fold(0.0f64, f64::max);
    Ok(GaussianBoundReport {
        kappa1,
        kappa2,
        max_violation,
        fits,
        degenerate,
        pass: !degenerate && max_violation <= ENVELOPE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::gaussian_density;
    use crate::dynamics::problem::{
        constant_coefficient, terminal, uncontrolled_coefficient, AssumptionBounds,
    };

    fn zero_drift() -> ProblemSpec {
        ProblemSpec {
            name: "zero".into(),
            drift: constant_coefficient(0.0),
            sigma: 1.0,
            running_cost: constant_coefficient(0.0),
            terminal_cost: terminal(|_, _| 0.0),
            atoms: vec![vec![0.0]],
            horizon: 1.0,
            bounds: AssumptionBounds {
                k1: 0.0,
                k2: 0.0,
                k3: 0.0,
            },
        }
    }

    #[test]
    fn streams_are_schedule_independent() {
        let a = ParticleSystem::new(500, 2, 9, |_, r, p| {
            p[0] = r.random();
            p[1] = r.random();
        });
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| {
            ParticleSystem::new(500, 2, 9, |_, r, p| {
                p[0] = r.random();
                p[1] = r.random();
            })
        });
        assert_eq!(a.positions(), b.positions());
    }

    #[test]
    fn two_dimensional_brownian_moments() {
        let mut sys = ParticleSystem::new(20000, 2, 3, |_, _, p| p.fill(0.0));
        let drift = vec![0.5; sys.len() * 2];
        for _ in 0..100 {
            sys.advance(&drift, 0.01, 1.0, None).unwrap();
        }
        let xs = sys.positions();
        for k in 0..2 {
            let mean = xs.iter().skip(k).step_by(2).sum::<f64>() / 20000.0;
            let var = xs
                .iter()
                .skip(k)
                .step_by(2)
                .map(|x| (x - mean).powi(2))
                .sum::<f64>()
                / 20000.0;
            assert!((mean - 0.5).abs() < 0.03, "{mean}");
            assert!((var - 1.0).abs() < 0.05, "{var}");
        }
    }

    #[test]
    fn same_seed_same_ensemble() {
        let g = Grid::standard(257).unwrap();
        let rho = gaussian_density(0.0, 0.25, &g).unwrap();
        let spec = zero_drift();
        let p = PolicySchedule::constant(0.0, 0.2, ControlLaw::pure(1, 0)).unwrap();
        let cfg = ParticleConfig::new(1e-2);
        let a = particle_simulate(&rho, 0.0, 0.2, &p, &spec, 1000, 11, &cfg).unwrap();
        let b = particle_simulate(&rho, 0.0, 0.2, &p, &spec, 1000, 11, &cfg).unwrap();
        assert_eq!(a, b);
        let c = particle_simulate(&rho, 0.0, 0.2, &p, &spec, 1000, 12, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_particles() {
        let g = Grid::standard(129).unwrap();
        let rho = gaussian_density(0.0, 0.25, &g).unwrap();
        let p = PolicySchedule::constant(0.0, 0.2, ControlLaw::pure(1, 0)).unwrap();
        assert!(particle_simulate(
            &rho,
            0.0,
            0.2,
            &p,
            &zero_drift(),
            50,
            1,
            &ParticleConfig::new(1e-2)
        )
        .is_err());
    }

    #[test]
    fn non_finite_drift_aborts() {
        let g = Grid::standard(129).unwrap();
        let rho = gaussian_density(0.0, 0.25, &g).unwrap();
        let mut spec = zero_drift();
        spec.drift = uncontrolled_coefficient(|_, x| if x > 0.5 { f64::INFINITY } else { 0.0 });
        let p = PolicySchedule::constant(0.0, 0.2, ControlLaw::pure(1, 0)).unwrap();
        let err = particle_simulate(
            &rho,
            0.0,
            0.2,
            &p,
            &spec,
            500,
            1,
            &ParticleConfig::new(1e-2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn zero_drift_envelope() {
        let g = Grid::standard(513).unwrap();
        let rho = gaussian_density(0.0, 0.5, &g).unwrap();
        let p = PolicySchedule::constant(0.0, 0.5, ControlLaw::pure(1, 0)).unwrap();
        let r = gaussian_bound_check(&rho, &p, &zero_drift(), 0.5, &BoundCheckConfig::default())
            .unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.kappa2 - 0.5).abs() < 0.05, "{r:?}");
        let exact = (2.0 * std::f64::consts::PI).sqrt();
        assert!((r.kappa1 / exact - 1.0).abs() < 0.2, "{r:?}");
    }
}
