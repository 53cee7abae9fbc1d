//! Probability densities tabulated on a [`Grid`], particle ensembles, and
//! the kernel density estimate linking the two.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::weightspace::{weighted_h12_norm_sq, Grid, WeightField};

pub const MASS_TOLERANCE: f64 = 1e-6;
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;
/// Mass allowed within one unit of either end of the grid.
pub const OUTER_MASS_TOLERANCE: f64 = 1e-8;

/// A nonnegative function on a grid with unit trapezoid mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Validates nonnegativity, unit mass and boundary hygiene.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.ensure_len(&values)?;
        let rho = Self { grid, values };
        let report = rho.hygiene();
        if let Some(flag) = report.flags.first() {
            return Err(Error::InvalidDensity(format!("{flag}: {report:?}")));
        }
        Ok(rho)
    }

    /// Rescales `values` to unit mass first, then validates.
    pub fn normalized(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        grid.ensure_len(&values)?;
        let mass = grid.integrate(&values);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidDensity(format!(
                "cannot normalize mass {mass}"
            )));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Self::new(grid, values)
    }

    /// Skips validation. Intended for inspecting candidate densities with
    /// [`check_d1r_membership`] and for solver internals that validate later.
    pub fn from_values_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn mean(&self) -> f64 {
        let xv: Vec<f64> = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(x, v)| x * v)
            .collect();
        self.grid.integrate(&xv) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let xv: Vec<f64> = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(x, v)| (x - m) * (x - m) * v)
            .collect();
        self.grid.integrate(&xv) / self.mass()
    }

    pub fn derivative(&self) -> Vec<f64> {
        self.grid.derivative(&self.values)
    }

    /// `E(ρ) = Σ (ρ² + (Dρ)²) γ h`.
    pub fn weighted_energy(&self, w: &WeightField) -> Result<f64> {
        self.grid.ensure_matches(w.grid())?;
        weighted_h12_norm_sq(&self.values, w)
    }

    /// Piecewise-linear CDF at the nodes (ends at the mass).
    pub fn cdf(&self) -> Vec<f64> {
        self.grid.cumulative(&self.values)
    }

    /// Inverse of the piecewise-linear CDF, for `p ∈ [0, 1]`.
    pub fn quantile(&self, p: f64) -> f64 {
        quantile_from_cdf(&self.grid, &self.cdf(), p)
    }

    fn hygiene(&self) -> HygieneReport {
        let mut flags = Vec::new();
        if self.values.iter().any(|v| !v.is_finite()) {
            flags.push(MembershipFlag::NonFinite);
            return HygieneReport {
                mass_error: f64::NAN,
                min_value: f64::NAN,
                boundary_value: f64::NAN,
                outer_mass: f64::NAN,
                flags,
            };
        }
        let min_value = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        if min_value < 0.0 {
            flags.push(MembershipFlag::Negativity);
        }
        let mass_error = (self.mass() - 1.0).abs();
        if mass_error > MASS_TOLERANCE {
            flags.push(MembershipFlag::Mass);
        }
        let n = self.grid.len();
        let boundary_value = self.values[0].abs().max(self.values[n - 1].abs());
        let outer_mass = self.outer_mass();
        if boundary_value > BOUNDARY_TOLERANCE || outer_mass > OUTER_MASS_TOLERANCE {
            flags.push(MembershipFlag::BoundaryMass);
        }
        HygieneReport {
            mass_error,
            min_value,
            boundary_value,
            outer_mass,
            flags,
        }
    }

    /// Mass carried within one unit of either grid end.
    fn outer_mass(&self) -> f64 {
        let g = &self.grid;
        let cdf = self.cdf();
        let total = *cdf.last().unwrap();
        let lo = interp_linear(g, &cdf, g.lower() + 1.0);
        let hi = interp_linear(g, &cdf, g.upper() - 1.0);
        (lo + (total - hi)).abs()
    }
}

fn interp_linear(grid: &Grid, v: &[f64], x: f64) -> f64 {
    let s = ((x - grid.lower()) / grid.h()).clamp(0.0, (grid.len() - 1) as f64);
    let i = (s.floor() as usize).min(grid.len() - 2);
    let frac = s - i as f64;
    v[i] * (1.0 - frac) + v[i + 1] * frac
}

pub(crate) fn quantile_from_cdf(grid: &Grid, cdf: &[f64], p: f64) -> f64 {
    let total = *cdf.last().unwrap();
    let target = p.clamp(0.0, 1.0) * total;
    let i = cdf.partition_point(|&c| c < target);
    if i == 0 {
        return grid.lower();
    }
    if i >= cdf.len() {
        return grid.upper();
    }
    let (c0, c1) = (cdf[i - 1], cdf[i]);
    let frac = if c1 > c0 {
        (target - c0) / (c1 - c0)
    } else {
        0.0
    };
    grid.node(i - 1) + frac * grid.h()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipFlag {
    NonFinite,
    Negativity,
    Mass,
    BoundaryMass,
}

impl std::fmt::Display for MembershipFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MembershipFlag::NonFinite => "non-finite",
            MembershipFlag::Negativity => "negativity",
            MembershipFlag::Mass => "mass",
            MembershipFlag::BoundaryMass => "boundary mass",
        })
    }
}

#[derive(Debug, Clone)]
struct HygieneReport {
    mass_error: f64,
    min_value: f64,
    boundary_value: f64,
    outer_mass: f64,
    flags: Vec<MembershipFlag>,
}

#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub mass_error: f64,
    pub min_value: f64,
    pub weighted_energy: f64,
    pub boundary_value: f64,
    pub outer_mass: f64,
    pub flags: Vec<MembershipFlag>,
    pub pass: bool,
}

impl MembershipReport {
    pub fn has(&self, flag: MembershipFlag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Discrete surrogate for membership in the weighted density space: mass,
/// sign, truncation hygiene and a finite weighted energy.
pub fn check_d1r_membership(rho: &GridDensity, w: &WeightField) -> MembershipReport {
    let h = rho.hygiene();
    let mut flags = h.flags;
    let weighted_energy = if rho.grid.matches(w.grid()) {
        weighted_h12_norm_sq(&rho.values, w).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    if !weighted_energy.is_finite() && !flags.contains(&MembershipFlag::NonFinite) {
        flags.push(MembershipFlag::NonFinite);
    }
    MembershipReport {
        mass_error: h.mass_error,
        min_value: h.min_value,
        weighted_energy,
        boundary_value: h.boundary_value,
        outer_mass: h.outer_mass,
        pass: flags.is_empty(),
        flags,
    }
}

fn check_coverage(grid: &Grid, mean: f64, var: f64) -> Result<()> {
    let reach = 6.0 * var.sqrt();
    if mean - reach < grid.lower() + 1.0 || mean + reach > grid.upper() - 1.0 {
        return Err(Error::InvalidArgument(format!(
            "N({mean}, {var}) not covered by grid [{}, {}]",
            grid.lower(),
            grid.upper()
        )));
    }
    Ok(())
}

/// Normal density renormalized to unit trapezoid mass on the grid.
pub fn gaussian_density(mean: f64, var: f64, grid: &Grid) -> Result<GridDensity> {
    mixture_density(&[(1.0, mean, var)], grid)
}

/// Finite Gaussian mixture `Σ wₖ N(mₖ, vₖ)`; weights are normalized.
pub fn mixture_density(components: &[(f64, f64, f64)], grid: &Grid) -> Result<GridDensity> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("empty mixture".into()));
    }
    let total: f64 = components.iter().map(|c| c.0).sum();
    for &(wt, mean, var) in components {
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "variance {var} must be positive"
            )));
        }
        if !(wt >= 0.0) {
            return Err(Error::InvalidArgument(format!("mixture weight {wt}")));
        }
        check_coverage(grid, mean, var)?;
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("mixture weights sum to zero".into()));
    }
    let values = grid
        .nodes()
        .iter()
        .map(|&x| {
            components
                .iter()
                .map(|&(wt, m, v)| wt / total * normal_pdf(x, m, v))
                .sum()
        })
        .collect();
    GridDensity::normalized(*grid, values)
}

#[inline]
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    (-0.5 * z * z / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Empirical measure of `n` equally weighted particles in `dim` dimensions,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    dim: usize,
    seed: u64,
}

impl ParticleEnsemble {
    pub const MIN_PARTICLES: usize = 100;

    pub fn new(positions: Vec<f64>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || !positions.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not split into dimension {dim}",
                positions.len()
            )));
        }
        if positions.len() / dim < Self::MIN_PARTICLES {
            return Err(Error::InvalidArgument(format!(
                "ensemble needs at least {} particles",
                Self::MIN_PARTICLES
            )));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("particle positions".into()));
        }
        Ok(Self {
            positions,
            dim,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Coordinate-wise sample standard deviation of the first coordinate.
    fn std_dev_first(&self) -> f64 {
        let n = self.len() as f64;
        let mean = (0..self.len()).map(|i| self.particle(i)[0]).sum::<f64>() / n;
        let var = (0..self.len())
            .map(|i| (self.particle(i)[0] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        var.sqrt()
    }

    /// Silverman's rule of thumb, `1.06 σ̂ N^{-1/5}`.
    pub fn silverman_bandwidth(&self) -> f64 {
        1.06 * self.std_dev_first() * (self.len() as f64).powf(-0.2)
    }

    /// One-column CSV preceded by a `# seed=` line (one column per dimension).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed={}", self.seed)?;
        let header: Vec<String> = (0..self.dim)
            .map(|k| {
                if self.dim == 1 {
                    "x".to_string()
                } else {
                    format!("x{k}")
                }
            })
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.particle(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Io("empty ensemble file".into()))??;
        let seed = first
            .trim()
            .strip_prefix("# seed=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Io(format!("bad seed header {first:?}")))?;
        let header = lines
            .next()
            .ok_or_else(|| Error::Io("missing column header".into()))??;
        let dim = header.split(',').count();
        let mut positions = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for field in line.split(',') {
                positions.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Io(format!("{field:?}: {e}")))?,
                );
            }
        }
        Self::new(positions, dim, seed)
    }
}

/// Gaussian kernel density estimate of a 1-D ensemble, renormalized on the grid.
pub fn kde(ensemble: &ParticleEnsemble, bandwidth: f64, grid: &Grid) -> Result<GridDensity> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {bandwidth} must be positive"
        )));
    }
    if ensemble.dim() != 1 {
        return Err(Error::InvalidArgument("kde needs a 1-D ensemble".into()));
    }
    let values = kde_values(ensemble.positions(), bandwidth, grid);
    let rho = GridDensity::from_values_unchecked(*grid, values);
    let mass = rho.mass();
    if !(mass > 0.0) {
        return Err(Error::InvalidDensity(
            "ensemble lies outside the grid".into(),
        ));
    }
    Ok(GridDensity::from_values_unchecked(
        *grid,
        rho.into_values().into_iter().map(|v| v / mass).collect(),
    ))
}

/// Unnormalized direct-sum estimate; kernels are cut at ±8 bandwidths.
pub(crate) fn kde_values(points: &[f64], bandwidth: f64, grid: &Grid) -> Vec<f64> {
    use rayon::prelude::*;
    let n = grid.len();
    let h = grid.h();
    let cut = 8.0 * bandwidth;
    let inv = 1.0 / bandwidth;
    let norm = 1.0 / (points.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let chunk = 4096;
    let mut values = points
        .par_chunks(chunk)
        .map(|ps| {
            let mut acc = vec![0.0; n];
            for &p in ps {
                let lo = (((p - cut - grid.lower()) / h).ceil().max(0.0)) as usize;
                let hi_f = ((p + cut - grid.lower()) / h).floor();
                if hi_f < 0.0 {
                    continue;
                }
                let hi = (hi_f as usize).min(n - 1);
                for (i, a) in acc.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    let z = (grid.node(i) - p) * inv;
                    *a += (-0.5 * z * z).exp();
                }
            }
            acc
        })
        .reduce(
            || vec![0.0; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    values.iter_mut().for_each(|v| *v *= norm);
    values
}

pub fn write_density_csv<W: Write>(rho: &GridDensity, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["x", "value"])?;
    for (x, v) in rho.grid().nodes().iter().zip(rho.values()) {
        wtr.write_record([format!("{x:e}"), format!("{v:e}")])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a two-column `(x, value)` file; nodes must be uniformly spaced.
pub fn read_density_csv<R: std::io::Read>(input: R) -> Result<GridDensity> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Io("short record".into()))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Io(e.to_string()))
        };
        xs.push(parse(0)?);
        vs.push(parse(1)?);
    }
    if xs.len() < 2 {
        return Err(Error::Io("density file has fewer than two rows".into()));
    }
    let grid = Grid::new(xs[0], *xs.last().unwrap(), xs.len())?;
    for (i, x) in xs.iter().enumerate() {
        if (x - grid.node(i)).abs() > 1e-9 * (1.0 + x.abs()) {
            return Err(Error::InvalidGrid(format!(
                "node {i} at {x} is not uniform"
            )));
        }
    }
    GridDensity::new(grid, vs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weightspace::build_weight;

    #[test]
    fn gaussian_mass_and_symmetry() {
        let g = Grid::standard(1025).unwrap();
        let rho = gaussian_density(0.0, 1.0, &g).unwrap();
        assert!((rho.mass() - 1.0).abs() < 1e-9);
        let v = rho.values();
        for i in 0..g.len() {
            assert_eq!(v[i], v[g.len() - 1 - i]);
        }
    }

    #[test]
    fn gaussian_rejects_bad_parameters() {
        let g = Grid::standard(257).unwrap();
        assert!(gaussian_density(0.0, 0.0, &g).is_err());
        assert!(gaussian_density(0.0, -1.0, &g).is_err());
        assert!(gaussian_density(6.0, 1.0, &g).is_err());
    }

    #[test]
    fn membership_flags() {
        let g = Grid::standard(513).unwrap();
        let w = build_weight(&g).unwrap();
        let ok = gaussian_density(0.0, 1.0, &g).unwrap();
        assert!(check_d1r_membership(&ok, &w).pass);

        let mut neg = ok.values().to_vec();
        neg[200] = -1e-3;
        let neg = GridDensity::from_values_unchecked(g, neg);
        let r = check_d1r_membership(&neg, &w);
        assert!(!r.pass && r.has(MembershipFlag::Negativity));

        let edge: Vec<f64> = g
            .nodes()
            .iter()
            .map(|&x| normal_pdf(x, 7.5, 0.25))
            .collect();
        let edge = GridDensity::from_values_unchecked(g, edge);
        let r = check_d1r_membership(&edge, &w);
        assert!(!r.pass && r.has(MembershipFlag::BoundaryMass));
        assert!(GridDensity::normalized(g, edge.into_values()).is_err());
    }

    #[test]
    fn single_particle_kde_is_a_gaussian() {
        let g = Grid::standard(513).unwrap();
        let ens = ParticleEnsemble::new(vec![0.0; 100], 1, 0).unwrap();
        let est = kde(&ens, 0.2, &g).unwrap();
        let exact = gaussian_density(0.0, 0.04, &g).unwrap();
        for (a, b) in est.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kde_rejects_bad_bandwidth() {
        let g = Grid::standard(257).unwrap();
        let ens = ParticleEnsemble::new(vec![0.0; 100], 1, 0).unwrap();
        assert!(kde(&ens, 0.0, &g).is_err());
        assert!(kde(&ens, -1.0, &g).is_err());
    }

    #[test]
    fn ensemble_needs_enough_particles() {
        assert!(ParticleEnsemble::new(vec![0.0; 99], 1, 0).is_err());
        assert!(ParticleEnsemble::new(vec![0.0; 201], 2, 0).is_err());
        assert!(ParticleEnsemble::new(vec![f64::NAN; 100], 1, 0).is_err());
    }

    #[test]
    fn csv_roundtrips() {
        let g = Grid::standard(129).unwrap();
        let rho = mixture_density(&[(0.3, -1.0, 0.5), (0.7, 1.0, 0.3)], &g).unwrap();
        let mut buf = Vec::new();
        write_density_csv(&rho, &mut buf).unwrap();
        let back = read_density_csv(buf.as_slice()).unwrap();
        assert!(back.grid().matches(rho.grid()));
        for (a, b) in back.values().iter().zip(rho.values()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }

        let ens =
            ParticleEnsemble::new((0..150).map(|i| i as f64 * 0.01).collect(), 1, 42).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        assert_eq!(ParticleEnsemble::read_csv(buf.as_slice()).unwrap(), ens);
    }

    #[test]
    fn quantiles_invert_cdf() {
        let g = Grid::standard(1025).unwrap();
        let rho = gaussian_density(0.5, 1.0, &g).unwrap();
        assert!((rho.quantile(0.5) - 0.5).abs() < 1e-3);
        assert!((rho.quantile(0.8413447) - 1.5).abs() < 2e-3);
    }
}
