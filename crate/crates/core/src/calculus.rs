//! Fréchet derivatives of functionals of densities in the `(F, G)`
//! representation `Aφ = ∫ F φ + G φ′ dx`, analytic derivatives for the
//! standard functional families, and a finite-difference verifier.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::weightspace::{weighted_h12_norm, weighted_h12_norm_sq, Grid, WeightField};

/// The pair `(δS/δρ(x), δS/δρ′(x))` tabulated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MortensenDerivative {
    grid: Grid,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl MortensenDerivative {
    pub fn new(grid: Grid, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        grid.ensure_len(&f)?;
        grid.ensure_len(&g)?;
        if f.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("derivative components".into()));
        }
        Ok(Self { grid, f, g })
    }

    pub fn zero(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            f: vec![0.0; n],
            g: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `x ↦ ∂ₓ(δS/δρ)(x)`, the only piece entering the Hamiltonian.
    pub fn gradient_of_f(&self) -> Vec<f64> {
        self.grid.derivative(&self.f)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            f: self.f.iter().map(|v| c * v).collect(),
            g: self.g.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.grid.ensure_matches(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            f: self.f.iter().zip(&other.f).map(|(a, b)| a + b).collect(),
            g: self.g.iter().zip(&other.g).map(|(a, b)| a + b).collect(),
        })
    }

    /// Three-column CSV `(x, F, G)`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x", "F", "G"])?;
        for i in 0..self.grid.len() {
            wtr.write_record([
                format!("{:e}", self.grid.node(i)),
                format!("{:e}", self.f[i]),
                format!("{:e}", self.g[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `Aφ = Σ (F φ + G Dφ) h`.
pub fn pairing(d: &MortensenDerivative, phi: &[f64]) -> Result<f64> {
    d.grid.ensure_len(phi)?;
    let dphi = d.grid.derivative(phi);
    let integrand: Vec<f64> = (0..phi.len())
        .map(|i| d.f[i] * phi[i] + d.g[i] * dphi[i])
        .collect();
    Ok(d.grid.integrate(&integrand))
}

/// `S(ρ) = ∫ k ρ` has derivative `(k, 0)`.
pub fn derivative_linear(grid: &Grid, k: &[f64]) -> Result<MortensenDerivative> {
    MortensenDerivative::new(*grid, k.to_vec(), vec![0.0; grid.len()])
}

/// A local integrand `H(ρ, ρ′)` with its two partial derivatives.
#[derive(Clone)]
pub struct Integrand {
    pub value: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub d_rho: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub d_drho: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl Integrand {
    pub fn new(
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d_rho: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d_drho: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            d_rho: Arc::new(d_rho),
            d_drho: Arc::new(d_drho),
        }
    }
}

impl std::fmt::Debug for Integrand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Integrand")
    }
}

/// `S(ρ) = ∫ H(ρ, ρ′)` has derivative `(∂H/∂ρ, ∂H/∂ρ′)` evaluated nodewise.
pub fn derivative_integrand(
    h: &Integrand,
    rho: &[f64],
    grid: &Grid,
) -> Result<MortensenDerivative> {
    grid.ensure_len(rho)?;
    let drho = grid.derivative(rho);
    let f: Vec<f64> = rho
        .iter()
        .zip(&drho)
        .map(|(&r, &d)| (h.d_rho)(r, d))
        .collect();
    let g: Vec<f64> = rho
        .iter()
        .zip(&drho)
        .map(|(&r, &d)| (h.d_drho)(r, d))
        .collect();
    MortensenDerivative::new(*grid, f, g)
}

/// Derivative of `ρ ↦ ‖ρ − ρ̂‖²_{H¹²(γ)}`: `(2(ρ−ρ̂)γ, 2(Dρ−Dρ̂)γ)`.
pub fn derivative_weighted_energy(
    rho: &[f64],
    rho_hat: &[f64],
    w: &WeightField,
) -> Result<MortensenDerivative> {
    let grid = w.grid();
    grid.ensure_len(rho)?;
    grid.ensure_len(rho_hat)?;
    let diff: Vec<f64> = rho.iter().zip(rho_hat).map(|(a, b)| a - b).collect();
    let ddiff = grid.derivative(&diff);
    let f = diff
        .iter()
        .zip(&w.gamma)
        .map(|(d, g)| 2.0 * d * g)
        .collect();
    let g = ddiff
        .iter()
        .zip(&w.gamma)
        .map(|(d, g)| 2.0 * d * g)
        .collect();
    MortensenDerivative::new(*grid, f, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionalFamily {
    Linear,
    Integrand,
    WeightedEnergy,
    Custom,
}

/// A real-valued functional of grid vectors.
#[derive(Clone)]
pub struct Functional {
    pub family: FunctionalFamily,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Functional({:?})", self.family)
    }
}

impl Functional {
    pub fn custom(eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            family: FunctionalFamily::Custom,
            eval: Arc::new(eval),
        }
    }

    /// `ρ ↦ ∫ k ρ`.
    pub fn linear(grid: Grid, k: Vec<f64>) -> Self {
        Self {
            family: FunctionalFamily::Linear,
            eval: Arc::new(move |rho| {
                let prod: Vec<f64> = k.iter().zip(rho).map(|(a, b)| a * b).collect();
                grid.integrate(&prod)
            }),
        }
    }

    /// `ρ ↦ ∫ H(ρ, Dρ)`.
    pub fn integrand(grid: Grid, h: Integrand) -> Self {
        Self {
            family: FunctionalFamily::Integrand,
            eval: Arc::new(move |rho| {
                let d = grid.derivative(rho);
                let v: Vec<f64> = rho
                    .iter()
                    .zip(&d)
                    .map(|(&r, &dr)| (h.value)(r, dr))
                    .collect();
                grid.integrate(&v)
            }),
        }
    }

    /// `ρ ↦ ‖ρ − offset‖²_{H¹²(γ)}`.
    pub fn weighted_energy(w: WeightField, offset: Vec<f64>) -> Self {
        Self {
            family: FunctionalFamily::WeightedEnergy,
            eval: Arc::new(move |rho| {
                let diff: Vec<f64> = rho.iter().zip(&offset).map(|(a, b)| a - b).collect();
                weighted_h12_norm_sq(&diff, &w).unwrap_or(f64::NAN)
            }),
        }
    }

    pub fn eval(&self, rho: &[f64]) -> f64 {
        (self.eval)(rho)
    }
}

/// The three step sizes of the derivative check.
pub const VERIFY_EPSILONS: [f64; 3] = [1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone)]
pub struct DirectionCheck {
    /// `r(ε)` for each entry of [`VERIFY_EPSILONS`].
    pub ratios: [f64; 3],
    /// `r` does not increase as `ε` shrinks (ties at the rounding floor allowed).
    pub monotone: bool,
}

#[derive(Debug, Clone)]
pub struct DerivativeReport {
    pub directions: Vec<DirectionCheck>,
    pub max_ratio_at_smallest: f64,
    pub all_monotone: bool,
}

impl DerivativeReport {
    pub fn passes(&self, tol_at_smallest: f64) -> bool {
        self.all_monotone && self.max_ratio_at_smallest <= tol_at_smallest
    }
}

/// For each direction φ computes
/// `r(ε) = |S(ρ+εφ) − S(ρ) − ε·Aφ| / (ε ‖φ‖_{H¹²(γ)})` over [`VERIFY_EPSILONS`].
pub fn verify_derivative(
    s: &Functional,
    d: &MortensenDerivative,
    rho: &[f64],
    directions: &[Vec<f64>],
    w: &WeightField,
) -> Result<DerivativeReport> {
    d.grid.ensure_len(rho)?;
    let s0 = s.eval(rho);
    if !s0.is_finite() {
        return Err(Error::NonFinite("functional value".into()));
    }
    let mut checks = Vec::with_capacity(directions.len());
    for phi in directions {
        d.grid.ensure_len(phi)?;
        let a_phi = pairing(d, phi)?;
        let norm = weighted_h12_norm(phi, w)?;
        if norm == 0.0 {
            return Err(Error::InvalidArgument("zero perturbation direction".into()));
        }
        let mut ratios = [0.0; 3];
        for (k, &eps) in VERIFY_EPSILONS.iter().enumerate() {
            let pert: Vec<f64> = rho.iter().zip(phi).map(|(r, p)| r + eps * p).collect();
            let s1 = s.eval(&pert);
            if !s1.is_finite() {
                return Err(Error::NonFinite("functional value".into()));
            }
            ratios[k] = (s1 - s0 - eps * a_phi).abs() / (eps * norm);
        }
        // Rounding in S(ρ+εφ) − S(ρ) is about 1e-16·|S|/ε; below that r stops decaying.
        let floor = 64.0 * f64::EPSILON * (1.0 + s0.abs()) / (VERIFY_EPSILONS[2] * norm);
        let monotone = ratios.windows(2).all(|p| p[1] <= p[0] || p[1] <= floor);
        checks.push(DirectionCheck { ratios, monotone });
    }
    let max_ratio_at_smallest = checks.iter().map(|c| c.ratios[2]).fold(0.0, f64::max);
    let all_monotone = checks.iter().all(|c| c.monotone);
    Ok(DerivativeReport {
        directions: checks,
        max_ratio_at_smallest,
        all_monotone,
    })
}

/// Mass-neutral direction `N(c₁, v) − N(c₂, v)` sampled on the grid.
pub fn bump_difference(grid: &Grid, c1: f64, c2: f64, var: f64) -> Vec<f64> {
    use crate::densities::normal_pdf;
    grid.nodes()
        .iter()
        .map(|&x| normal_pdf(x, c1, var) - normal_pdf(x, c2, var))
        .collect()
}
