use std::sync::Arc;

use crate::densities::GridDensity;
use crate::error::{Error, Result};
use crate::weightspace::Grid;

/// A coefficient `(t, x, ρ, u) ↦ ℝ` such as the drift or the running cost.
///
/// `eval_many` is the hot path used by the solvers; rules whose value
/// depends on a global statistic of `ρ` should override it so the statistic
/// is computed once per call rather than once per point.
pub trait CoefficientRule: Send + Sync {
    fn eval(&self, t: f64, x: f64, rho: &GridDensity, u: &[f64]) -> f64;

    fn eval_many(&self, t: f64, xs: &[f64], rho: &GridDensity, u: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = self.eval(t, x, rho, u);
        }
    }

    /// When false the solvers may pass any density for `ρ`.
    fn uses_density(&self) -> bool {
        true
    }

    /// When false the value is the same for every control atom.
    fn uses_control(&self) -> bool {
        true
    }

    fn is_zero(&self) -> bool {
        false
    }
}

/// Terminal cost `(x, ρ) ↦ ℝ`.
pub trait TerminalRule: Send + Sync {
    fn eval(&self, x: f64, rho: &GridDensity) -> f64;

    fn eval_many(&self, xs: &[f64], rho: &GridDensity, out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = self.eval(x, rho);
        }
    }
}

/// Closure-backed [`CoefficientRule`].
pub struct FnCoefficient<F> {
    f: F,
    uses_density: bool,
    uses_control: bool,
}

impl<F> CoefficientRule for FnCoefficient<F>
where
    F: Fn(f64, f64, &GridDensity, &[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, t: f64, x: f64, rho: &GridDensity, u: &[f64]) -> f64 {
        (self.f)(t, x, rho, u)
    }

    fn uses_density(&self) -> bool {
        self.uses_density
    }

    fn uses_control(&self) -> bool {
        self.uses_control
    }
}

/// A general coefficient; assumed to depend on both `ρ` and `u`.
pub fn coefficient<F>(f: F) -> Arc<dyn CoefficientRule>
where
    F: Fn(f64, f64, &GridDensity, &[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(FnCoefficient {
        f,
        uses_density: true,
        uses_control: true,
    })
}

/// A coefficient `(t, x, u) ↦ ℝ` that ignores the density.
pub fn local_coefficient<F>(f: F) -> Arc<dyn CoefficientRule>
where
    F: Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(FnCoefficient {
        f: move |t, x, _: &GridDensity, u: &[f64]| f(t, x, u),
        uses_density: false,
        uses_control: true,
    })
}

/// A coefficient `(t, x) ↦ ℝ` independent of density and control.
pub fn uncontrolled_coefficient<F>(f: F) -> Arc<dyn CoefficientRule>
where
    F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    Arc::new(FnCoefficient {
        f: move |t, x, _: &GridDensity, _: &[f64]| f(t, x),
        uses_density: false,
        uses_control: false,
    })
}

struct Constant(f64);

impl CoefficientRule for Constant {
    fn eval(&self, _: f64, _: f64, _: &GridDensity, _: &[f64]) -> f64 {
        self.0
    }

    fn eval_many(&self, _: f64, _: &[f64], _: &GridDensity, _: &[f64], out: &mut [f64]) {
        out.fill(self.0);
    }

    fn uses_density(&self) -> bool {
        false
    }

    fn uses_control(&self) -> bool {
        false
    }

    fn is_zero(&self) -> bool {
        self.0 == 0.0
    }
}

pub fn constant_coefficient(c: f64) -> Arc<dyn CoefficientRule> {
    Arc::new(Constant(c))
}

struct FnTerminal<F>(F);

impl<F> TerminalRule for FnTerminal<F>
where
    F: Fn(f64, &GridDensity) -> f64 + Send + Sync,
{
    fn eval(&self, x: f64, rho: &GridDensity) -> f64 {
        (self.0)(x, rho)
    }
}

pub fn terminal<F>(f: F) -> Arc<dyn TerminalRule>
where
    F: Fn(f64, &GridDensity) -> f64 + Send + Sync + 'static,
{
    Arc::new(FnTerminal(f))
}

/// Claimed constants of the Lipschitz/boundedness assumptions: `K̃₁`
/// (Lipschitz constant of `b`), `K̃₂` (bound on `|b|`) and `K̃₃` (bound and
/// Lipschitz constant of `f`, `g`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionBounds {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

/// Coefficients, noise level, control atoms and horizon of a controlled
/// McKean-Vlasov problem in one space dimension.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub drift: Arc<dyn CoefficientRule>,
    /// Constant diffusion coefficient; the generator carries `½σ²∂²ₓₓ`.
    pub sigma: f64,
    pub running_cost: Arc<dyn CoefficientRule>,
    pub terminal_cost: Arc<dyn TerminalRule>,
    /// Points of the compact control set `U ⊂ ℝᵏ`.
    pub atoms: Vec<Vec<f64>>,
    pub horizon: f64,
    pub bounds: AssumptionBounds,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("sigma", &self.sigma)
            .field("atoms", &self.atoms)
            .field("horizon", &self.horizon)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma = {} must be positive",
                self.sigma
            )));
        }
        if self.atoms.is_empty() {
            return Err(Error::InvalidControl("no control atoms".into()));
        }
        let k = self.atoms[0].len();
        if self
            .atoms
            .iter()
            .any(|a| a.len() != k || a.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidControl(
                "atoms must be finite points of equal dimension".into(),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon {}", self.horizon)));
        }
        Ok(())
    }

    /// `A = σσ*`.
    pub fn diffusion_matrix(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Explicit-scheme stability bound `min(h²/(2σ²), h/(2 max|b|))`.
    pub fn stability_bound(&self, h: f64, max_drift: f64) -> f64 {
        let diffusive = h * h / (2.0 * self.sigma * self.sigma);
        if max_drift > 0.0 {
            diffusive.min(h / (2.0 * max_drift))
        } else {
            diffusive
        }
    }

    /// `∫ g(x, ρ) ρ(x) dx`.
    pub fn terminal_value(&self, rho: &GridDensity) -> f64 {
        let xs = rho.grid().nodes();
        let mut g = vec![0.0; xs.len()];
        self.terminal_cost.eval_many(&xs, rho, &mut g);
        let prod: Vec<f64> = g.iter().zip(rho.values()).map(|(a, b)| a * b).collect();
        rho.grid().integrate(&prod)
    }
}

#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub max_drift: f64,
    pub max_cost: f64,
    pub drift_ok: bool,
    pub cost_ok: bool,
}

/// Samples `|b|` and `|f| + |g|` at random `(t, x, u)` for each supplied
/// density and compares with `K̃₂`, `K̃₃`.
pub fn check_assumption_bounds(
    spec: &ProblemSpec,
    densities: &[GridDensity],
    samples: usize,
    seed: u64,
) -> AssumptionReport {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut max_drift: f64 = 0.0;
    let mut max_cost: f64 = 0.0;
    for rho in densities {
        let g = rho.grid();
        for _ in 0..samples {
            let t = rng.random::<f64>() * spec.horizon;
            let x = g.lower() + rng.random::<f64>() * (g.upper() - g.lower());
            let u = &spec.atoms[rng.random_range(0..spec.atoms.len())];
            max_drift = max_drift.max(spec.drift.eval(t, x, rho, u).abs());
            let c =
                spec.running_cost.eval(t, x, rho, u).abs() + spec.terminal_cost.eval(x, rho).abs();
            max_cost = max_cost.max(c);
        }
    }
    AssumptionReport {
        max_drift,
        max_cost,
        drift_ok: max_drift <= spec.bounds.k2,
        cost_ok: max_cost <= spec.bounds.k3,
    }
}

/// A probability vector over the atoms of a [`ProblemSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControl {
    weights: Vec<f64>,
}

impl RelaxedControl {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidControl("empty weight vector".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidControl(format!(
                "weights {weights:?} must be nonnegative"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidControl(format!("weights sum to {sum}")));
        }
        Ok(Self { weights })
    }

    /// Dirac mass on atom `j` of `n`.
    pub fn pure(n: usize, j: usize) -> Self {
        assert!(j < n, "atom {j} out of range {n}");
        let mut weights = vec![0.0; n];
        weights[j] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Some(j)` when all mass sits on atom `j`.
    pub fn as_pure(&self) -> Option<usize> {
        let mut it = self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0);
        match (it.next(), it.next()) {
            (Some((j, w)), None) if (*w - 1.0).abs() < 1e-15 => Some(j),
            _ => None,
        }
    }
}

/// `Σⱼ αⱼ·coef(uⱼ)`, i.e. the coefficient integrated against the relaxed control.
pub fn apply_relaxed(
    coef: impl Fn(&[f64]) -> f64,
    alpha: &RelaxedControl,
    atoms: &[Vec<f64>],
) -> Result<f64> {
    if atoms.is_empty() {
        return Err(Error::InvalidControl("no atoms".into()));
    }
    if alpha.len() != atoms.len() {
        return Err(Error::InvalidControl(format!(
            "{} weights for {} atoms",
            alpha.len(),
            atoms.len()
        )));
    }
    Ok(alpha
        .weights
        .iter()
        .zip(atoms)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, u)| w * coef(u))
        .sum())
}

/// Markovian feedback: one relaxed control per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTable {
    rows: Vec<RelaxedControl>,
}

impl FeedbackTable {
    pub fn new(rows: Vec<RelaxedControl>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidControl("empty feedback table".into()));
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidControl("ragged feedback table".into()));
        }
        Ok(Self { rows })
    }

    /// Table whose row at node `i` is `law(x_i)`.
    pub fn from_fn(grid: &Grid, law: impl Fn(f64) -> RelaxedControl) -> Result<Self> {
        Self::new(grid.nodes().into_iter().map(law).collect())
    }

    pub fn rows(&self) -> &[RelaxedControl] {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlLaw {
    Relaxed(RelaxedControl),
    Feedback(FeedbackTable),
}

impl ControlLaw {
    pub fn pure(n_atoms: usize, j: usize) -> Self {
        ControlLaw::Relaxed(RelaxedControl::pure(n_atoms, j))
    }

    pub(crate) fn check(&self, n_atoms: usize, grid: &Grid) -> Result<()> {
        match self {
            ControlLaw::Relaxed(a) if a.len() == n_atoms => Ok(()),
            ControlLaw::Feedback(t) if t.rows.len() == grid.len() && t.rows[0].len() == n_atoms => {
                Ok(())
            }
            _ => Err(Error::InvalidControl(
                "control law does not match the atoms or the grid".into(),
            )),
        }
    }

    /// Weight of atom `j` at node `i`.
    #[inline]
    pub(crate) fn weight_at(&self, i: usize, j: usize) -> f64 {
        match self {
            ControlLaw::Relaxed(a) => a.weights[j],
            ControlLaw::Feedback(t) => t.rows[i].weights[j],
        }
    }

    /// The relaxed control acting on a particle at node cell `i`.
    pub(crate) fn row(&self, i: usize) -> &RelaxedControl {
        match self {
            ControlLaw::Relaxed(a) => a,
            ControlLaw::Feedback(t) => &t.rows[i],
        }
    }

    /// Atoms carrying positive weight anywhere.
    pub(crate) fn active_atoms(&self, n_atoms: usize) -> Vec<usize> {
        (0..n_atoms)
            .filter(|&j| match self {
                ControlLaw::Relaxed(a) => a.weights[j] > 0.0,
                ControlLaw::Feedback(t) => t.rows.iter().any(|r| r.weights[j] > 0.0),
            })
            .collect()
    }
}

/// Piecewise-in-time control laws covering `[breakpoints[0], breakpoints[K]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySchedule {
    breakpoints: Vec<f64>,
    laws: Vec<ControlLaw>,
}

impl PolicySchedule {
    pub fn new(breakpoints: Vec<f64>, laws: Vec<ControlLaw>) -> Result<Self> {
        if breakpoints.len() < 2 || laws.len() + 1 != breakpoints.len() {
            return Err(Error::InvalidControl(format!(
                "{} breakpoints for {} laws",
                breakpoints.len(),
                laws.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidControl("breakpoints must increase".into()));
        }
        Ok(Self { breakpoints, laws })
    }

    pub fn constant(s: f64, t: f64, law: ControlLaw) -> Result<Self> {
        Self::new(vec![s, t], vec![law])
    }

    /// `laws.len()` equal pieces of `[s, t]`.
    pub fn uniform(s: f64, t: f64, laws: Vec<ControlLaw>) -> Result<Self> {
        let k = laws.len();
        if k == 0 {
            return Err(Error::InvalidControl("no laws".into()));
        }
        let bps = (0..=k).map(|i| s + (t - s) * i as f64 / k as f64).collect();
        Self::new(bps, laws)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn laws(&self) -> &[ControlLaw] {
        &self.laws
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// True when the schedule spans `[s, t]`.
    pub fn covers(&self, s: f64, t: f64) -> bool {
        let tol = 1e-12 * (1.0 + t.abs());
        self.start() <= s + tol && self.end() >= t - tol
    }

    pub(crate) fn check(&self, n_atoms: usize, grid: &Grid) -> Result<()> {
        self.laws.iter().try_for_each(|l| l.check(n_atoms, grid))
    }

    /// Sub-intervals of `[s, t]` with their laws.
    pub(crate) fn segments(&self, s: f64, t: f64) -> Vec<(f64, f64, &ControlLaw)> {
        let mut out = Vec::new();
        for (k, law) in self.laws.iter().enumerate() {
            let a = self.breakpoints[k].max(s);
            let b = self.breakpoints[k + 1].min(t);
            if b > a + 1e-14 * (1.0 + b.abs()) {
                out.push((a, b, law));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_relaxed_cases() {
        let atoms = vec![vec![0.0], vec![1.0]];
        let dirac = RelaxedControl::pure(2, 1);
        assert_eq!(
            apply_relaxed(|u| 3.0 * u[0] + 1.0, &dirac, &atoms).unwrap(),
            4.0
        );
        let mix = RelaxedControl::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(apply_relaxed(|_| 2.5, &mix, &atoms).unwrap(), 2.5);
        assert_eq!(apply_relaxed(|u| u[0], &mix, &atoms).unwrap(), 0.75);
        let three = RelaxedControl::pure(3, 0);
        assert!(apply_relaxed(|u| u[0], &three, &atoms).is_err());
        assert!(apply_relaxed(|u| u[0], &dirac, &[]).is_err());
    }

    #[test]
    fn relaxed_control_validation() {
        assert!(RelaxedControl::new(vec![]).is_err());
        assert!(RelaxedControl::new(vec![0.5, 0.6]).is_err());
        assert!(RelaxedControl::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(RelaxedControl::pure(3, 2).as_pure(), Some(2));
        assert_eq!(RelaxedControl::new(vec![0.5, 0.5]).unwrap().as_pure(), None);
    }

    #[test]
    fn schedule_validation_and_segments() {
        let law = ControlLaw::pure(2, 0);
        assert!(PolicySchedule::new(vec![0.0], vec![]).is_err());
        assert!(PolicySchedule::new(vec![0.0, 0.0], vec![law.clone()]).is_err());
        let p =
            PolicySchedule::uniform(0.0, 1.0, vec![law.clone(), ControlLaw::pure(2, 1)]).unwrap();
        assert_eq!(p.breakpoints(), &[0.0, 0.5, 1.0]);
        let segs = p.segments(0.25, 1.0);
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].0, segs[0].1), (0.25, 0.5));
        assert!(p.covers(0.0, 1.0) && !p.covers(0.0, 1.5));
    }
}
