use rayon::prelude::*;

use super::borwein_preiss::{borwein_preiss, BPResult};
use super::metric::{MetricSpace, ProductSpace};
use crate::control::ValueFn;
use crate::densities::GridDensity;
use crate::error::{Error, Result};
use crate::weightspace::{weighted_h12_norm, weighted_h12_norm_sq, WeightField};

/// Parameters of the auxiliary function `Φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoublingParams {
    pub alpha_tilde: f64,
    pub beta: f64,
    pub lambda: f64,
    pub theta: f64,
    pub eta: f64,
    pub eps: f64,
}

impl DoublingParams {
    /// `α̃ = 4√ε + ε^{1/4}`.
    pub fn standard_alpha(eps: f64) -> f64 {
        4.0 * eps.sqrt() + eps.powf(0.25)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} = {v} must lie in (0, 1)"
                )))
            }
        };
        unit("alpha_tilde", self.alpha_tilde)?;
        unit("beta", self.beta)?;
        unit("lambda", self.lambda)?;
        unit("theta", self.theta)?;
        unit("eps", self.eps)?;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta = {} must be positive",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Everything in `Φ` except `W − V`.
#[allow(clippy::too_many_arguments)]
fn penalty(
    t: f64,
    s: f64,
    norm_rho_sq: f64,
    norm_chi_sq: f64,
    diff_sq: f64,
    p: &DoublingParams,
    horizon: f64,
) -> f64 {
    p.alpha_tilde * (p.eta * (2.0 * horizon - t - s)).exp() * (norm_rho_sq + norm_chi_sq)
        + p.beta * (2.0 * horizon - s - t)
        + p.lambda / t
        + p.lambda / s
        + (diff_sq + (t - s) * (t - s)) / (2.0 * p.theta)
}

/// `Φ(t, s, ρ, χ) = W(t, ρ) − V(s, χ) − α̃e^{η(2T−t−s)}(‖ρ‖² + ‖χ‖²)
/// − β(2T − s − t) − λ/t − λ/s − (F(ρ − χ) + |t − s|²)/(2θ)`,
/// with squared weighted Sobolev norms and `F` the weighted energy.
#[allow(clippy::too_many_arguments)]
pub fn build_phi(
    t: f64,
    s: f64,
    rho: &GridDensity,
    chi: &GridDensity,
    w_eval: &ValueFn<'_>,
    v_eval: &ValueFn<'_>,
    params: &DoublingParams,
    horizon: f64,
    w: &WeightField,
) -> Result<f64> {
    params.validate()?;
    if !(t > 0.0 && s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "t = {t} and s = {s} must be positive"
        )));
    }
    rho.grid().ensure_matches(chi.grid())?;
    let diff: Vec<f64> = rho
        .values()
        .iter()
        .zip(chi.values())
        .map(|(a, b)| a - b)
        .collect();
    let pen = penalty(
        t,
        s,
        weighted_h12_norm_sq(rho.values(), w)?,
        weighted_h12_norm_sq(chi.values(), w)?,
        weighted_h12_norm_sq(&diff, w)?,
        params,
        horizon,
    );
    Ok(w_eval(t, rho)? - v_eval(s, chi)? - pen)
}

/// `max` of `W − V` over the probes.
pub fn comparison_gap(
    w_eval: &ValueFn<'_>,
    v_eval: &ValueFn<'_>,
    probes: &[(f64, GridDensity)],
) -> Result<f64> {
    let mut gap = f64::NEG_INFINITY;
    for (t, rho) in probes {
        gap = gap.max(w_eval(*t, rho)? - v_eval(*t, rho)?);
    }
    Ok(gap)
}

/// `W` and `V` tabulated on a time grid times a density dictionary, with
/// the dictionary's squared norms and pairwise squared distances.
#[derive(Debug, Clone)]
pub struct DoublingTables {
    pub times: Vec<f64>,
    pub horizon: f64,
    /// `w[i][a] = W(times[i], dictionary[a])`.
    pub w: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub norm_sq: Vec<f64>,
    pub diff_sq: Vec<Vec<f64>>,
}

impl DoublingTables {
    pub fn build(
        w_eval: &ValueFn<'_>,
        v_eval: &ValueFn<'_>,
        dictionary: &[GridDensity],
        times: &[f64],
        horizon: f64,
        weight: &WeightField,
    ) -> Result<Self> {
        if dictionary.is_empty() || times.is_empty() {
            return Err(Error::InvalidArgument(
                "empty dictionary or time grid".into(),
            ));
        }
        for rho in dictionary {
            rho.grid().ensure_matches(weight.grid())?;
        }
        if times
            .iter()
            .any(|&t| !(t > 0.0 && t <= horizon * (1.0 + 1e-12)))
        {
            return Err(Error::InvalidArgument(format!(
                "time grid must lie in (0, {horizon}]"
            )));
        }
        if !times
            .iter()
            .any(|&t| (t - horizon).abs() <= 1e-12 * (1.0 + horizon))
        {
            return Err(Error::InvalidArgument(
                "time grid must contain the horizon".into(),
            ));
        }
        let k = dictionary.len();
        let cells: Vec<(usize, usize)> = (0..times.len())
            .flat_map(|i| (0..k).map(move |a| (i, a)))
            .collect();
        let evals: Vec<Result<(f64, f64)>> = cells
            .par_iter()
            .map(|&(i, a)| {
                Ok((
                    w_eval(times[i], &dictionary[a])?,
                    v_eval(times[i], &dictionary[a])?,
                ))
            })
            .collect();
        let mut w = vec![vec![0.0; k]; times.len()];
        let mut v = vec![vec![0.0; k]; times.len()];
        for (&(i, a), e) in cells.iter().zip(evals) {
            let (wi, vi) = e?;
            w[i][a] = wi;
            v[i][a] = vi;
        }
        let norm_sq = dictionary
            .iter()
            .map(|r| weighted_h12_norm_sq(r.values(), weight))
            .collect::<Result<Vec<_>>>()?;
        let mut diff_sq = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in a + 1..k {
                let d: Vec<f64> = dictionary[a]
                    .values()
                    .iter()
                    .zip(dictionary[b].values())
                    .map(|(x, y)| x - y)
                    .collect();
                let n = weighted_h12_norm_sq(&d, weight)?;
                diff_sq[a][b] = n;
                diff_sq[b][a] = n;
            }
        }
        Ok(Self {
            times: times.to_vec(),
            horizon,
            w,
            v,
            norm_sq,
            diff_sq,
        })
    }

    /// Adds `delta` to every `W` entry.
    pub fn shift_w(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.w.iter_mut().flatten().for_each(|x| *x += delta);
        out
    }

    /// `M = max(|W|, |V|)` over the tables.
    pub fn bound(&self) -> f64 {
        self.w
            .iter()
            .chain(&self.v)
            .flatten()
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    fn space(&self) -> Result<ProductSpace> {
        let dist = self
            .diff_sq
            .iter()
            .map(|r| r.iter().map(|x| x.sqrt()).collect())
            .collect();
        ProductSpace::new(self.times.clone(), dist)
    }

    fn phi_values(&self, space: &ProductSpace, params: &DoublingParams) -> Vec<f64> {
        (0..space.len())
            .into_par_iter()
            .map(|p| {
                let (i, j, a, b) = space.decode(p);
                let (t, s) = (self.times[i], self.times[j]);
                self.w[i][a]
                    - self.v[j][b]
                    - penalty(
                        t,
                        s,
                        self.norm_sq[a],
                        self.norm_sq[b],
                        self.diff_sq[a][b],
                        params,
                        self.horizon,
                    )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoublingRow {
    pub theta: f64,
    pub t_eps: f64,
    pub s_eps: f64,
    pub rho_index: usize,
    pub chi_index: usize,
    pub h5_lhs: f64,
    pub h5_rhs: f64,
    /// `|t − s|² + ‖ρ − χ‖²`.
    pub h8: f64,
    /// `h8 / θ`.
    pub h9: f64,
    /// `t_ε ∨ s_ε = T`.
    pub case1: bool,
    pub bp: BPResult,
    pub phi_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoublingReport {
    pub rows: Vec<DoublingRow>,
    pub m_bound: f64,
    pub m1: f64,
    pub slack: f64,
    pub h5_pass: bool,
    pub h8_nonincreasing: bool,
    pub h9_pass: bool,
    pub certificates_pass: bool,
}

impl DoublingReport {
    pub fn pass(&self) -> bool {
        self.h5_pass && self.h8_nonincreasing && self.h9_pass && self.certificates_pass
    }
}

/// Runs the maximization of `Φ − √ε Δ` over the tabulated probe set for
/// each `θ` and evaluates the quantitative estimates of the doubling
/// argument. `params.theta` is overridden by the sweep.
pub fn doubling_from_tables(
    tables: &DoublingTables,
    thetas: &[f64],
    params: &DoublingParams,
    q: f64,
) -> Result<DoublingReport> {
    if params.alpha_tilde <= 4.0 * params.eps.sqrt() {
        return Err(Error::Precondition(format!(
            "alpha_tilde = {} must exceed 4 sqrt(eps) = {}",
            params.alpha_tilde,
            4.0 * params.eps.sqrt()
        )));
    }
    if thetas.is_empty() {
        return Err(Error::InvalidArgument("empty theta sweep".into()));
    }
    let space = tables.space()?;
    let m_bound = tables.bound();
    let rho0_norm = tables.norm_sq.iter().copied().fold(f64::INFINITY, f64::min);
    let horizon = tables.horizon;
    let m1 = 2.0 * m_bound + 10.0 * rho0_norm + 2.0 + 8.0 * horizon * horizon;
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let p = DoublingParams { theta, ..*params };
        p.validate()?;
        let phi = tables.phi_values(&space, &p);
        let (y0, phi_max) =
            phi.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                });
        let bp = borwein_preiss(&space, &phi, p.eps, y0, q)?;
        let (i, j, a, b) = space.decode(bp.y_eps);
        let (t, s) = (tables.times[i], tables.times[j]);
        let h8 = (t - s) * (t - s) + tables.diff_sq[a][b];
        rows.push(DoublingRow {
            theta,
            t_eps: t,
            s_eps: s,
            rho_index: a,
            chi_index: b,
            h5_lhs: (p.alpha_tilde - 4.0 * p.eps.sqrt()) * (tables.norm_sq[a] + tables.norm_sq[b]),
            h5_rhs: m1,
            h8,
            h9: h8 / theta,
            case1: t.max(s) >= horizon * (1.0 - 1e-12),
            bp,
            phi_max,
        });
    }
    let min_time_gap = tables
        .times
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(f64::INFINITY, f64::min);
    let min_dict_gap = (0..tables.norm_sq.len())
        .flat_map(|a| {
            (0..tables.norm_sq.len())
                .filter(move |&b| b != a)
                .map(move |b| (a, b))
        })
        .map(|(a, b)| tables.diff_sq[a][b])
        .fold(f64::INFINITY, f64::min);
    let slack = [min_time_gap * min_time_gap, min_dict_gap]
        .into_iter()
        .filter(|x| x.is_finite())
        .fold(0.0, f64::max);
    let h9_smallest = rows
        .iter()
        .min_by(|x, y| x.theta.total_cmp(&y.theta))
        .map(|r| r.h9)
        .unwrap_or(f64::INFINITY);
    let mut by_theta: Vec<&DoublingRow> = rows.iter().collect();
    by_theta.sort_by(|x, y| y.theta.total_cmp(&x.theta));
    Ok(DoublingReport {
        h5_pass: rows.iter().all(|r| r.h5_lhs <= r.h5_rhs),
        h8_nonincreasing: by_theta.windows(2).all(|w| w[1].h8 <= w[0].h8 + 1e-14),
        h9_pass: h9_smallest <= 4.0 * params.eps + slack,
        certificates_pass: rows.iter().all(|r| r.bp.certificate.pass()),
        rows,
        m_bound,
        m1,
        slack,
    })
}

/// Tabulates `W`, `V` on `time_grid × dictionary` and runs
/// [`doubling_from_tables`].
#[allow(clippy::too_many_arguments)]
pub fn doubling_experiment(
    w_eval: &ValueFn<'_>,
    v_eval: &ValueFn<'_>,
    dictionary: &[GridDensity],
    time_grid: &[f64],
    horizon: f64,
    thetas: &[f64],
    params: &DoublingParams,
    weight: &WeightField,
) -> Result<DoublingReport> {
    if params.alpha_tilde <= 4.0 * params.eps.sqrt() {
        return Err(Error::Precondition(format!(
            "alpha_tilde = {} must exceed 4 sqrt(eps)",
            params.alpha_tilde
        )));
    }
    let tables = DoublingTables::build(w_eval, v_eval, dictionary, time_grid, horizon, weight)?;
    doubling_from_tables(&tables, thetas, params, 0.5)
}

/// `‖ρ − χ‖_{H¹²(γ)}` for every pair of a dictionary.
pub fn dictionary_distances(
    dictionary: &[GridDensity],
    weight: &WeightField,
) -> Result<Vec<Vec<f64>>> {
    let k = dictionary.len();
    let mut out = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let d: Vec<f64> = dictionary[a]
                .values()
                .iter()
                .zip(dictionary[b].values())
                .map(|(x, y)| x - y)
                .collect();
            let n = weighted_h12_norm(&d, weight)?;
            out[a][b] = n;
            out[b][a] = n;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::gaussian_density;
    use crate::fixtures::pm_one_value;
    use crate::weightspace::{build_weight, Grid};

    fn setup() -> (WeightField, Vec<GridDensity>) {
        let g = Grid::standard(257).unwrap();
        let w = build_weight(&g).unwrap();
        let dict = [(-0.5, 0.3), (0.0, 0.25), (0.4, 0.35), (0.8, 0.3)]
            .iter()
            .map(|&(m, v)| gaussian_density(m, v, &g).unwrap())
            .collect();
        (w, dict)
    }

    fn params(eps: f64) -> DoublingParams {
        DoublingParams {
            alpha_tilde: DoublingParams::standard_alpha(eps),
            beta: 0.1,
            lambda: 0.01,
            theta: 0.1,
            eta: 0.5,
            eps,
        }
    }

    #[test]
    fn phi_on_the_diagonal() {
        let (w, dict) = setup();
        let v = |t: f64, r: &GridDensity| Ok(pm_one_value(t, r, 1.0));
        let p = params(0.01);
        let rho = &dict[1];
        let t = 0.4;
        let phi = build_phi(t, t, rho, rho, &v, &v, &p, 1.0, &w).unwrap();
        let n = weighted_h12_norm_sq(rho.values(), &w).unwrap();
        let expect = -2.0 * p.alpha_tilde * (2.0 * p.eta * (1.0 - t)).exp() * n
            - 2.0 * p.beta * (1.0 - t)
            - 2.0 * p.lambda / t;
        assert!((phi - expect).abs() <= 1e-12 * expect.abs());
        assert!(build_phi(0.0, t, rho, rho, &v, &v, &p, 1.0, &w).is_err());
    }

    #[test]
    fn phi_monotone_in_parameters() {
        let (w, dict) = setup();
        let v = |t: f64, r: &GridDensity| Ok(pm_one_value(t, r, 1.0));
        let p = params(0.01);
        let base = build_phi(0.3, 0.5, &dict[0], &dict[2], &v, &v, &p, 1.0, &w).unwrap();
        for q in [
            DoublingParams { beta: 0.2, ..p },
            DoublingParams { lambda: 0.02, ..p },
            DoublingParams { theta: 0.05, ..p },
        ] {
            assert!(build_phi(0.3, 0.5, &dict[0], &dict[2], &v, &v, &q, 1.0, &w).unwrap() < base);
        }
        let at = |eta: f64| {
            let q = DoublingParams { eta, ..p };
            let zero = DoublingParams {
                alpha_tilde: 1e-300,
                ..q
            };
            build_phi(0.3, 0.5, &dict[0], &dict[2], &v, &v, &zero, 1.0, &w).unwrap()
                - build_phi(0.3, 0.5, &dict[0], &dict[2], &v, &v, &q, 1.0, &w).unwrap()
        };
        let ratio = at(1.0) / at(0.5);
        assert!((ratio - (0.5f64 * 1.2).exp()).abs() <= 1e-9, "{ratio}");
    }

    #[test]
    fn sweep_and_shift_invariance() {
        let (w, dict) = setup();
        let v = |t: f64, r: &GridDensity| Ok(pm_one_value(t, r, 1.0));
        let times = [0.25, 0.5, 0.75, 1.0];
        let tables = DoublingTables::build(&v, &v, &dict, &times, 1.0, &w).unwrap();
        let p = params(0.01);
        let report = doubling_from_tables(&tables, &[1e-1, 1e-2, 1e-3], &p, 0.5).unwrap();
        assert!(report.pass(), "{report:?}");
        let shifted =
            doubling_from_tables(&tables.shift_w(0.1), &[1e-1, 1e-2, 1e-3], &p, 0.5).unwrap();
        for (a, b) in report.rows.iter().zip(&shifted.rows) {
            assert_eq!(a.bp.y_eps, b.bp.y_eps);
        }
        let bad = DoublingParams {
            alpha_tilde: 0.3,
            ..p
        };
        assert!(doubling_from_tables(&tables, &[0.1], &bad, 0.5).is_err());
    }

    #[test]
    fn comparison_gap_cases() {
        let (_, dict) = setup();
        let v = |t: f64, r: &GridDensity| Ok(pm_one_value(t, r, 1.0));
        let lower = |t: f64, r: &GridDensity| Ok(pm_one_value(t, r, 1.0) - 0.2);
        let probes: Vec<(f64, GridDensity)> = dict.iter().map(|r| (0.3, r.clone())).collect();
        assert_eq!(comparison_gap(&v, &v, &probes).unwrap(), 0.0);
        assert!((comparison_gap(&lower, &v, &probes).unwrap() + 0.2).abs() <= 1e-12);
    }

    #[test]
    fn time_grid_must_reach_horizon() {
        let (w, dict) = setup();
        let v = |t: f64, r: &GridDensity| Ok(pm_one_value(t, r, 1.0));
        assert!(DoublingTables::build(&v, &v, &dict, &[0.25, 0.5], 1.0, &w).is_err());
        assert!(DoublingTables::build(&v, &v, &dict, &[0.0, 1.0], 1.0, &w).is_err());
    }
}
