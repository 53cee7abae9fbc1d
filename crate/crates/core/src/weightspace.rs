//! Uniform 1-D grid, the exponential reference weight γ and the weighted
//! norms and probability distances built on it.
//!
//! γ equals 1 on `|x| ≤ 1` and `e^{|x|}` on `|x| > 2`. On the blend zone it is
//! `exp(r·S(r−1))` with the quintic smoothstep `S(u) = 6u⁵ − 15u⁴ + 10u³`,
//! which makes γ twice continuously differentiable and keeps `γ ≥ 1`.
//!
//! All integrals are trapezoid sums over the grid nodes and all derivatives
//! are second-order finite differences (central inside, one-sided at the two
//! ends), so every discrete norm carries an `O(h²)` error.

use crate::densities::GridDensity;
use crate::error::{Error, Result};

/// Uniformly spaced nodes `x_i = lower + i·h`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    lower: f64,
    upper: f64,
    n: usize,
    h: f64,
}

impl Grid {
    pub const MIN_NODES: usize = 16;

    pub fn new(lower: f64, upper: f64, n: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) {
            return Err(Error::InvalidGrid("non-finite endpoints".into()));
        }
        if n < Self::MIN_NODES {
            return Err(Error::InvalidGrid(format!("n = {n} < {}", Self::MIN_NODES)));
        }
        if !(lower < -2.0 && upper > 2.0) {
            return Err(Error::InvalidGrid(format!(
                "[{lower}, {upper}] must strictly contain [-2, 2]"
            )));
        }
        let h = (upper - lower) / (n - 1) as f64;
        Ok(Self { lower, upper, n, h })
    }

    /// The default working domain `[-8, 8]`.
    pub fn standard(n: usize) -> Result<Self> {
        Self::new(-8.0, 8.0, n)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Midpoints between consecutive nodes (`n − 1` of them).
    pub fn faces(&self) -> Vec<f64> {
        (0..self.n - 1)
            .map(|i| self.node(i) + 0.5 * self.h)
            .collect()
    }

    /// Trapezoid quadrature weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// Same number of nodes on the same interval.
    pub fn matches(&self, other: &Grid) -> bool {
        self.n == other.n
            && (self.lower - other.lower).abs() <= 1e-12 * (1.0 + self.lower.abs())
            && (self.upper - other.upper).abs() <= 1e-12 * (1.0 + self.upper.abs())
    }

    pub fn ensure_matches(&self, other: &Grid) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn ensure_len(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.n {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                expected: self.n,
                got: v.len(),
            })
        }
    }

    /// A grid on the same interval with `(n−1)·factor + 1` nodes.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.lower, self.upper, (self.n - 1) * factor.max(1) + 1)
    }

    /// Index of the node whose control volume contains `x` (clamped).
    pub fn cell_of(&self, x: f64) -> usize {
        let k = ((x - self.lower) / self.h).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n - 1)
        }
    }

    pub fn integrate(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        let inner: f64 = v[1..self.n - 1].iter().sum();
        self.h * (inner + 0.5 * (v[0] + v[self.n - 1]))
    }

    /// Composite Simpson rule; the last panel falls back to Simpson's 3/8
    /// rule when the number of intervals is odd.
    pub fn integrate_simpson(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        let intervals = self.n - 1;
        let (even_part, tail) = if intervals.is_multiple_of(2) {
            (intervals, 0.0)
        } else {
            let m = intervals - 3;
            let t = 3.0 * self.h / 8.0 * (v[m] + 3.0 * v[m + 1] + 3.0 * v[m + 2] + v[m + 3]);
            (m, t)
        };
        let mut s = v[0] + v[even_part];
        for (i, &vi) in v.iter().enumerate().take(even_part).skip(1) {
            s += if i % 2 == 1 { 4.0 * vi } else { 2.0 * vi };
        }
        s * self.h / 3.0 + tail
    }

    /// Running trapezoid integral, starting at 0 at the left endpoint.
    pub fn cumulative(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n);
        let mut acc = 0.0;
        out.push(0.0);
        for i in 1..self.n {
            acc += 0.5 * self.h * (v[i - 1] + v[i]);
            out.push(acc);
        }
        out
    }

    /// Second-order first derivative.
    pub fn derivative(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let inv2h = 0.5 / self.h;
        let mut d = vec![0.0; n];
        d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) * inv2h;
        for i in 1..n - 1 {
            d[i] = (v[i + 1] - v[i - 1]) * inv2h;
        }
        d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) * inv2h;
        d
    }
}

/// `m(r)` with `γ = exp(m(|x|))`, and its first two derivatives in `r`.
fn blend_exponent(r: f64) -> (f64, f64, f64) {
    if r <= 1.0 {
        (0.0, 0.0, 0.0)
    } else if r >= 2.0 {
        (r, 1.0, 0.0)
    } else {
        let u = r - 1.0;
        let s = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
        let s1 = 30.0 * u * u * (1.0 - u) * (1.0 - u);
        let s2 = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
        (r * s, s + r * s1, 2.0 * s1 + r * s2)
    }
}

/// γ, γ′ and γ″ at a single point.
pub fn gamma_at(x: f64) -> (f64, f64, f64) {
    let r = x.abs();
    let (m, m1, m2) = blend_exponent(r);
    let g = m.exp();
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    (g, sign * m1 * g, (m2 + m1 * m1) * g)
}

/// γ and its derivatives tabulated on a grid, with the constants κ and κ₄.
#[derive(Debug, Clone)]
pub struct WeightField {
    grid: Grid,
    pub gamma: Vec<f64>,
    pub dgamma: Vec<f64>,
    pub d2gamma: Vec<f64>,
    /// Smallest `κ ≥ 1` with `|γ′| ≤ κγ` and `|γ″| ≤ κγ` at every node.
    pub kappa: f64,
    /// `∫|x| γ(x)⁻¹ dx` over the grid interval.
    pub kappa4: f64,
}

impl WeightField {
    pub fn build(grid: &Grid) -> Result<Self> {
        if grid.lower() > -2.5 || grid.upper() < 2.5 {
            return Err(Error::InvalidGrid(
                "weight grid must contain [-2.5, 2.5]".into(),
            ));
        }
        let n = grid.len();
        let mut gamma = Vec::with_capacity(n);
        let mut dgamma = Vec::with_capacity(n);
        let mut d2gamma = Vec::with_capacity(n);
        for x in grid.nodes() {
            let (g, g1, g2) = gamma_at(x);
            gamma.push(g);
            dgamma.push(g1);
            d2gamma.push(g2);
        }
        let kappa = gamma
            .iter()
            .zip(dgamma.iter().zip(&d2gamma))
            .map(|(g, (g1, g2))| (g1.abs() / g).max(g2.abs() / g))
            .fold(1.0_f64, f64::max);
        let integrand: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(&gamma)
            .map(|(x, g)| x.abs() / g)
            .collect();
        let kappa4 = grid.integrate_simpson(&integrand);
        Ok(Self {
            grid: *grid,
            gamma,
            dgamma,
            d2gamma,
            kappa,
            kappa4,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

pub fn build_weight(grid: &Grid) -> Result<WeightField> {
    WeightField::build(grid)
}

/// Discrete `‖ρ‖_{L²(γ)}`.
pub fn weighted_l2_norm(rho: &[f64], w: &WeightField) -> Result<f64> {
    w.grid.ensure_len(rho)?;
    let integrand: Vec<f64> = rho.iter().zip(&w.gamma).map(|(r, g)| r * r * g).collect();
    Ok(w.grid.integrate(&integrand).sqrt())
}

/// Discrete `‖ρ‖²_{H¹²(γ)} = Σ (ρ² + (Dρ)²) γ h`.
pub fn weighted_h12_norm_sq(rho: &[f64], w: &WeightField) -> Result<f64> {
    w.grid.ensure_len(rho)?;
    let d = w.grid.derivative(rho);
    let integrand: Vec<f64> = rho
        .iter()
        .zip(&d)
        .zip(&w.gamma)
        .map(|((r, dr), g)| (r * r + dr * dr) * g)
        .collect();
    Ok(w.grid.integrate(&integrand))
}

pub fn weighted_h12_norm(rho: &[f64], w: &WeightField) -> Result<f64> {
    weighted_h12_norm_sq(rho, w).map(f64::sqrt)
}

/// Exact 1-D `W₁ = ∫ |F_ρ − F_χ| dx` from cumulative trapezoid sums.
pub fn wasserstein1(rho: &GridDensity, chi: &GridDensity) -> Result<f64> {
    let grid = rho.grid();
    grid.ensure_matches(chi.grid())?;
    let fr = grid.cumulative(rho.values());
    let fc = grid.cumulative(chi.values());
    let diff: Vec<f64> = fr.iter().zip(&fc).map(|(a, b)| (a - b).abs()).collect();
    Ok(grid.integrate(&diff))
}

/// `∫|ρ − χ| dx`, the supremum of `∫ f (ρ − χ)` over `|f| ≤ 1`.
pub fn total_variation(rho: &GridDensity, chi: &GridDensity) -> Result<f64> {
    let grid = rho.grid();
    grid.ensure_matches(chi.grid())?;
    let diff: Vec<f64> = rho
        .values()
        .iter()
        .zip(chi.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(grid.integrate(&diff))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W1BoundReport {
    pub w1: f64,
    /// `κ₄ ‖ρ − χ‖_{L²(γ)}`.
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Checks `W₁(ρ, χ) ≤ κ₄‖ρ − χ‖_{L²(γ)}` with a slack of four grid cells.
pub fn check_w1_weighted_bound(
    rho: &GridDensity,
    chi: &GridDensity,
    w: &WeightField,
) -> Result<W1BoundReport> {
    w.grid.ensure_matches(rho.grid())?;
    let w1 = wasserstein1(rho, chi)?;
    let diff: Vec<f64> = rho
        .values()
        .iter()
        .zip(chi.values())
        .map(|(a, b)| a - b)
        .collect();
    let bound = w.kappa4 * weighted_l2_norm(&diff, w)?;
    let slack = 4.0 * w.grid.h();
    Ok(W1BoundReport {
        w1,
        bound,
        slack,
        holds: w1 <= bound + slack,
    })
}
