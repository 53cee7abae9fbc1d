use std::sync::Arc;

use super::hamiltonian::{min_hamiltonian, probe_basis, ValueFn};
use crate::calculus::{derivative_linear, derivative_weighted_energy, MortensenDerivative};
use crate::densities::GridDensity;
use crate::dynamics::ProblemSpec;
use crate::error::{Error, Result};
use crate::weightspace::{weighted_h12_norm, Grid, WeightField};

type Eval = Arc<dyn Fn(f64, &GridDensity) -> Result<f64> + Send + Sync>;
type Deriv = Arc<dyn Fn(f64, &GridDensity) -> Result<MortensenDerivative> + Send + Sync>;

/// A smooth functional `ψ(t, ρ)` with its time derivative and Mortensen
/// derivative, used to touch value functions from above or below.
#[derive(Clone)]
pub struct TestFunctional {
    pub name: String,
    eval: Eval,
    time_derivative: Eval,
    derivative: Deriv,
    /// The family satisfies the integrability and continuity requirements
    /// for smooth test functions.
    pub smooth: bool,
}

impl std::fmt::Debug for TestFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunctional")
            .field("name", &self.name)
            .field("smooth", &self.smooth)
            .finish_non_exhaustive()
    }
}

impl TestFunctional {
    /// `a t + c + ∫ k ρ`.
    pub fn linear(grid: Grid, k: Vec<f64>, a: f64, c: f64) -> Result<Self> {
        grid.ensure_len(&k)?;
        let d = derivative_linear(&grid, &k)?;
        let kk = k.clone();
        Ok(Self {
            name: "linear".into(),
            eval: Arc::new(move |t, rho| {
                let prod: Vec<f64> = kk.iter().zip(rho.values()).map(|(a, b)| a * b).collect();
                Ok(a * t + c + rho.grid().integrate(&prod))
            }),
            time_derivative: Arc::new(move |_, _| Ok(a)),
            derivative: Arc::new(move |_, rho| {
                rho.grid().ensure_matches(d.grid())?;
                Ok(d.clone())
            }),
            smooth: true,
        })
    }

    /// `c·E(ρ − ρ̂) + c′(t − t̂)²` with `E` the weighted energy.
    pub fn energy_offset(
        w: WeightField,
        rho_hat: Vec<f64>,
        t_hat: f64,
        c: f64,
        c_time: f64,
    ) -> Result<Self> {
        w.grid().ensure_len(&rho_hat)?;
        let w2 = w.clone();
        let hat2 = rho_hat.clone();
        Ok(Self {
            name: "energy-offset".into(),
            eval: Arc::new(move |t, rho| {
                let diff: Vec<f64> = rho
                    .values()
                    .iter()
                    .zip(&rho_hat)
                    .map(|(a, b)| a - b)
                    .collect();
                let e = crate::weightspace::weighted_h12_norm_sq(&diff, &w)?;
                Ok(c * e + c_time * (t - t_hat) * (t - t_hat))
            }),
            time_derivative: Arc::new(move |t, _| Ok(2.0 * c_time * (t - t_hat))),
            derivative: Arc::new(move |_, rho| {
                Ok(derivative_weighted_energy(rho.values(), &hat2, &w2)?.scaled(c))
            }),
            smooth: true,
        })
    }

    pub fn sum(&self, other: &TestFunctional) -> TestFunctional {
        let (e1, e2) = (self.eval.clone(), other.eval.clone());
        let (t1, t2) = (self.time_derivative.clone(), other.time_derivative.clone());
        let (d1, d2) = (self.derivative.clone(), other.derivative.clone());
        TestFunctional {
            name: format!("{}+{}", self.name, other.name),
            eval: Arc::new(move |t, rho| Ok(e1(t, rho)? + e2(t, rho)?)),
            time_derivative: Arc::new(move |t, rho| Ok(t1(t, rho)? + t2(t, rho)?)),
            derivative: Arc::new(move |t, rho| d1(t, rho)?.add(&d2(t, rho)?)),
            smooth: self.smooth && other.smooth,
        }
    }

    /// `−ψ`.
    pub fn negated(&self) -> TestFunctional {
        let e = self.eval.clone();
        let td = self.time_derivative.clone();
        let d = self.derivative.clone();
        TestFunctional {
            name: format!("-{}", self.name),
            eval: Arc::new(move |t, rho| Ok(-e(t, rho)?)),
            time_derivative: Arc::new(move |t, rho| Ok(-td(t, rho)?)),
            derivative: Arc::new(move |t, rho| Ok(d(t, rho)?.scaled(-1.0))),
            smooth: self.smooth,
        }
    }

    pub fn eval(&self, t: f64, rho: &GridDensity) -> Result<f64> {
        (self.eval)(t, rho)
    }

    pub fn time_derivative(&self, t: f64, rho: &GridDensity) -> Result<f64> {
        (self.time_derivative)(t, rho)
    }

    pub fn derivative(&self, t: f64, rho: &GridDensity) -> Result<MortensenDerivative> {
        (self.derivative)(t, rho)
    }
}

/// `Σ |D(F)|² γ⁻¹ h` for the `F` component of a derivative.
pub fn gradient_energy(d: &MortensenDerivative, w: &WeightField) -> Result<f64> {
    d.grid().ensure_matches(w.grid())?;
    let g = d.gradient_of_f();
    let v: Vec<f64> = g.iter().zip(&w.gamma).map(|(x, gm)| x * x / gm).collect();
    Ok(d.grid().integrate(&v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessReport {
    pub gradient_energy: f64,
    /// `|q(ρ + εφ) − q(ρ)|` for `‖εφ‖_{H¹²(γ)} = ε`, one entry per scale.
    pub continuity: Vec<f64>,
    pub finite: bool,
    pub monotone: bool,
}

impl SmoothnessReport {
    pub fn pass(&self) -> bool {
        self.finite && self.monotone
    }
}

/// Checks finiteness of the gradient energy at `(t, ρ)` and its continuity
/// along a normalized mass-neutral perturbation over the given scales.
pub fn check_smoothness(
    psi: &TestFunctional,
    t: f64,
    rho: &GridDensity,
    w: &WeightField,
    scales: &[f64],
) -> Result<SmoothnessReport> {
    let q0 = gradient_energy(&psi.derivative(t, rho)?, w)?;
    let phi = probe_basis(rho).swap_remove(1);
    let norm = weighted_h12_norm(&phi, w)?;
    let mut continuity = Vec::with_capacity(scales.len());
    for &e in scales {
        let pert: Vec<f64> = rho
            .values()
            .iter()
            .zip(&phi)
            .map(|(r, p)| r + e * p / norm)
            .collect();
        let rp = GridDensity::from_values_unchecked(*rho.grid(), pert);
        continuity.push((gradient_energy(&psi.derivative(t, &rp)?, w)? - q0).abs());
    }
    let floor = 1e-12 * (1.0 + q0.abs());
    let monotone = continuity.windows(2).all(|p| p[1] <= p[0] || p[1] <= floor);
    Ok(SmoothnessReport {
        gradient_energy: q0,
        continuity: continuity.clone(),
        finite: q0.is_finite() && continuity.iter().all(|c| c.is_finite()),
        monotone,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Touching {
    /// `(t₀, ρ₀)` maximizes `V − ψ`; the subsolution inequality is tested.
    FromAbove,
    /// `(t₀, ρ₀)` minimizes `V − ψ`; the supersolution inequality is tested.
    FromBelow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityReport {
    /// Worst violation of the extremum property over the neighbourhood
    /// (positive means `(t₀, ρ₀)` is not an extremum of `V − ψ`).
    pub extremum_violation: f64,
    /// `−∂ₜψ − min_α H(t₀, ρ₀, δψ/δρ, α)`.
    pub expression: f64,
    pub pass: bool,
}

/// Tests the viscosity inequality for `V` at `(t₀, ρ₀)` with test
/// functional `psi`, after confirming the touching property on `neighbours`.
#[allow(clippy::too_many_arguments)]
pub fn check_viscosity(
    v_eval: &ValueFn<'_>,
    psi: &TestFunctional,
    t0: f64,
    rho0: &GridDensity,
    neighbours: &[(f64, GridDensity)],
    touching: Touching,
    spec: &ProblemSpec,
    tol: f64,
) -> Result<ViscosityReport> {
    if !(t0 >= 0.0 && t0 < spec.horizon) {
        return Err(Error::InvalidArgument(format!("t0 = {t0} outside [0, T)")));
    }
    let centre = v_eval(t0, rho0)? - psi.eval(t0, rho0)?;
    let mut extremum_violation: f64 = f64::NEG_INFINITY;
    for (t, rho) in neighbours {
        let d = v_eval(*t, rho)? - psi.eval(*t, rho)? - centre;
        let v = match touching {
            Touching::FromAbove => d,
            Touching::FromBelow => -d,
        };
        extremum_violation = extremum_violation.max(v);
    }
    let dpsi = psi.derivative(t0, rho0)?;
    let (mh, _) = min_hamiltonian(t0, rho0, &dpsi, spec)?;
    let expression = -psi.time_derivative(t0, rho0)? - mh;
    let inequality = match touching {
        Touching::FromAbove => expression <= tol,
        Touching::FromBelow => expression >= -tol,
    };
    Ok(ViscosityReport {
        extremum_violation,
        expression,
        pass: extremum_violation <= tol && inequality,
    })
}
