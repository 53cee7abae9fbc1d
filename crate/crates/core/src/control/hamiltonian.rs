use nalgebra::{DMatrix, DVector};

use crate::calculus::MortensenDerivative;
use crate::densities::{normal_pdf, GridDensity};
use crate::dynamics::{ProblemSpec, RelaxedControl};
use crate::error::{Error, Result};

/// A value function available only through evaluations `(t, ρ) ↦ V(t, ρ)`.
pub type ValueFn<'a> = dyn Fn(f64, &GridDensity) -> Result<f64> + Sync + 'a;

fn weighted_sum(a: &[f64], b: &[f64], rho: &GridDensity) -> f64 {
    let g = rho.grid();
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| x * y * g.weight(i))
        .sum()
}

/// Hamiltonian at the pure atom `j`.
fn hamiltonian_atom(
    t: f64,
    rho: &GridDensity,
    dfdx: &[f64],
    drho: &[f64],
    j: usize,
    spec: &ProblemSpec,
) -> f64 {
    let xs = rho.grid().nodes();
    let u = &spec.atoms[j];
    let mut b = vec![0.0; xs.len()];
    let mut f = vec![0.0; xs.len()];
    spec.drift.eval_many(t, &xs, rho, u, &mut b);
    spec.running_cost.eval_many(t, &xs, rho, u, &mut f);
    let transport: f64 = b
        .iter()
        .zip(dfdx)
        .zip(rho.values())
        .enumerate()
        .map(|(i, ((bi, di), ri))| bi * di * ri * rho.grid().weight(i))
        .sum();
    let diffusion = -0.5 * spec.diffusion_matrix() * weighted_sum(dfdx, drho, rho);
    transport + diffusion + weighted_sum(&f, rho.values(), rho)
}

fn gradients(rho: &GridDensity, d: &MortensenDerivative) -> Result<(Vec<f64>, Vec<f64>)> {
    rho.grid().ensure_matches(d.grid())?;
    Ok((d.gradient_of_f(), rho.derivative()))
}

/// `Σ b·D(F)·ρ h − ½σ² Σ D(F)·Dρ h + Σ f ρ h` with `b`, `f` averaged over
/// the relaxed control. Only the `F` component of `d` enters.
pub fn hamiltonian(
    t: f64,
    rho: &GridDensity,
    d: &MortensenDerivative,
    alpha: &RelaxedControl,
    spec: &ProblemSpec,
) -> Result<f64> {
    if alpha.len() != spec.atoms.len() {
        return Err(Error::InvalidControl(format!(
            "{} weights for {} atoms",
            alpha.len(),
            spec.atoms.len()
        )));
    }
    let (dfdx, drho) = gradients(rho, d)?;
    Ok(alpha
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(j, w)| w * hamiltonian_atom(t, rho, &dfdx, &drho, j, spec))
        .sum())
}

/// Minimum of [`hamiltonian`] over pure atoms and the first atom attaining it.
pub fn min_hamiltonian(
    t: f64,
    rho: &GridDensity,
    d: &MortensenDerivative,
    spec: &ProblemSpec,
) -> Result<(f64, usize)> {
    let (dfdx, drho) = gradients(rho, d)?;
    let mut best = (f64::INFINITY, 0);
    for j in 0..spec.atoms.len() {
        let h = hamiltonian_atom(t, rho, &dfdx, &drho, j, spec);
        if h < best.0 {
            best = (h, j);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeProbeConfig {
    /// Initial perturbation size; halved until `ρ ± εφ ≥ 0`.
    pub epsilon: f64,
    /// Half-width of the central time difference.
    pub time_step: f64,
    pub ridge: f64,
    /// Normal-matrix condition number above which the fit is flagged.
    pub condition_limit: f64,
}

impl Default for DerivativeProbeConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            time_step: 1e-2,
            ridge: 1e-8,
            condition_limit: 1e10,
        }
    }
}

/// Six mass-neutral Gaussian differences adapted to `ρ`: three odd
/// (shift-type) and three even (width-type), centred at `μ − s`, `μ`, `μ + s`.
pub fn probe_basis(rho: &GridDensity) -> Vec<Vec<f64>> {
    let g = rho.grid();
    let mu = rho.mean();
    let sd = rho.variance().sqrt();
    let v = 0.5 * sd * sd;
    let xs = g.nodes();
    let normalized = |c: f64, var: f64| -> Vec<f64> {
        let raw: Vec<f64> = xs.iter().map(|&x| normal_pdf(x, c, var)).collect();
        let m = g.integrate(&raw);
        raw.into_iter().map(|p| p / m).collect()
    };
    let mut basis = Vec::with_capacity(6);
    for c in [mu - sd, mu, mu + sd] {
        let right = normalized(c + 0.5 * sd, v);
        let left = normalized(c - 0.5 * sd, v);
        basis.push(right.iter().zip(&left).map(|(a, b)| a - b).collect());
    }
    for c in [mu - sd, mu, mu + sd] {
        let narrow = normalized(c, 0.5 * v);
        let wide = normalized(c, v);
        basis.push(narrow.iter().zip(&wide).map(|(a, b)| a - b).collect());
    }
    basis
}

/// Largest `ε' ≤ ε` of the form `ε/2ᵏ` keeping `ρ ± ε'φ` nonnegative.
fn admissible_step(rho: &[f64], phi: &[f64], eps: f64) -> f64 {
    let mut e = eps;
    for _ in 0..60 {
        if rho.iter().zip(phi).all(|(r, p)| r - e * p.abs() >= 0.0) {
            return e;
        }
        e *= 0.5;
    }
    0.0
}

#[derive(Debug, Clone)]
pub struct ProbedDerivative {
    pub derivative: MortensenDerivative,
    /// Coefficients of `ξ, ξ², ξ³` with `ξ = (x − μ)/s`.
    pub coefficients: [f64; 3],
    pub condition: f64,
    pub ill_conditioned: bool,
    /// Largest misfit between observed and modelled directional derivatives.
    pub misfit: f64,
}

/// Estimates the `F` component of the derivative of `V(t, ·)` at `ρ` by
/// ridge regression of central differences along the probe basis.
pub fn probe_derivative(
    v_eval: &ValueFn<'_>,
    t: f64,
    rho: &GridDensity,
    probe: &DerivativeProbeConfig,
) -> Result<ProbedDerivative> {
    let g = *rho.grid();
    let basis = probe_basis(rho);
    let mu = rho.mean();
    let sd = rho.variance().sqrt();
    if !(sd > 0.0) {
        return Err(Error::InvalidDensity(
            "degenerate density for probing".into(),
        ));
    }
    let xi: Vec<f64> = g.nodes().iter().map(|x| (x - mu) / sd).collect();
    let features: Vec<Vec<f64>> = (1..=3)
        .map(|k| xi.iter().map(|z| z.powi(k)).collect())
        .collect();

    let m = basis.len();
    let mut a = DMatrix::<f64>::zeros(m, 3);
    let mut y = DVector::<f64>::zeros(m);
    for (r, phi) in basis.iter().enumerate() {
        let eps = admissible_step(rho.values(), phi, probe.epsilon);
        if eps == 0.0 {
            return Err(Error::Precondition("no admissible probe step".into()));
        }
        let plus: Vec<f64> = rho
            .values()
            .iter()
            .zip(phi)
            .map(|(p, q)| p + eps * q)
            .collect();
        let minus: Vec<f64> = rho
            .values()
            .iter()
            .zip(phi)
            .map(|(p, q)| p - eps * q)
            .collect();
        let vp = v_eval(t, &GridDensity::from_values_unchecked(g, plus))?;
        let vm = v_eval(t, &GridDensity::from_values_unchecked(g, minus))?;
        y[r] = (vp - vm) / (2.0 * eps);
        for (k, feat) in features.iter().enumerate() {
            a[(r, k)] = weighted_sum(feat, phi, rho);
        }
    }
    let normal = a.transpose() * &a;
    let sv = normal.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    let lhs = normal + DMatrix::<f64>::identity(3, 3) * probe.ridge;
    let rhs = a.transpose() * &y;
    let coef = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("singular probe regression".into()))?;
    let misfit = (&a * &coef - &y).amax();
    let f: Vec<f64> = (0..g.len())
        .map(|i| (0..3).map(|k| coef[k] * features[k][i]).sum())
        .collect();
    Ok(ProbedDerivative {
        derivative: MortensenDerivative::new(g, f, vec![0.0; g.len()])?,
        coefficients: [coef[0], coef[1], coef[2]],
        condition,
        ill_conditioned: !(condition <= probe.condition_limit),
        misfit,
    })
}

#[derive(Debug, Clone)]
pub struct HjbResidualReport {
    pub residual: f64,
    pub time_derivative: f64,
    pub min_hamiltonian: f64,
    pub argmin_atom: usize,
    pub probe: ProbedDerivative,
}

/// `−∂ₜV − min_α H(t, ρ, δV/δρ, α)` with both derivatives estimated from
/// evaluations of `V`.
pub fn hjb_residual(
    v_eval: &ValueFn<'_>,
    t: f64,
    rho: &GridDensity,
    spec: &ProblemSpec,
    probe: &DerivativeProbeConfig,
) -> Result<HjbResidualReport> {
    let dt = probe.time_step;
    if !(t - dt >= 0.0 && t + dt <= spec.horizon) {
        return Err(Error::InvalidArgument(format!(
            "t = {t} too close to [0, {}] for time step {dt}",
            spec.horizon
        )));
    }
    let time_derivative = (v_eval(t + dt, rho)? - v_eval(t - dt, rho)?) / (2.0 * dt);
    let pd = probe_derivative(v_eval, t, rho, probe)?;
    let (mh, argmin_atom) = min_hamiltonian(t, rho, &pd.derivative, spec)?;
    Ok(HjbResidualReport {
        residual: -time_derivative - mh,
        time_derivative,
        min_hamiltonian: mh,
        argmin_atom,
        probe: pd,
    })
}

/// `|V(T, ρ) − Σ g(x, ρ) ρ h|`.
pub fn terminal_condition_gap(
    v_eval: &ValueFn<'_>,
    rho: &GridDensity,
    spec: &ProblemSpec,
) -> Result<f64> {
    Ok((v_eval(spec.horizon, rho)? - spec.terminal_value(rho)).abs())
}
