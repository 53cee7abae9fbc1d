use rayon::prelude::*;

use crate::densities::GridDensity;
use crate::dynamics::{advance, rollout, ControlLaw, PolicySchedule, ProblemSpec, Stepper};
use crate::error::{Error, Result};
use crate::weightspace::wasserstein1;

fn at_horizon(s: f64, spec: &ProblemSpec) -> bool {
    (spec.horizon - s).abs() <= 1e-12 * (1.0 + spec.horizon.abs())
}

/// `J = ∫ₛᵀ Σ f ρ h dr + Σ g(x, ρ_T) ρ_T h` along the Fokker-Planck path.
pub fn cost(
    rho0: &GridDensity,
    s: f64,
    policy: &PolicySchedule,
    spec: &ProblemSpec,
    dt: f64,
) -> Result<f64> {
    if at_horizon(s, spec) {
        return Ok(spec.terminal_value(rho0));
    }
    let r = rollout(rho0, s, spec.horizon, policy, spec, dt)?;
    Ok(r.running_cost + spec.terminal_value(&r.terminal))
}

/// Piecewise-constant policy search over `[s, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Number of equal time pieces `K`.
    pub pieces: usize,
    /// Laws tried on every piece; index order defines tie-breaking.
    pub candidates: Vec<ControlLaw>,
    pub dt: f64,
    /// Upper bound on `|candidates|^K`.
    pub max_rollouts: usize,
    pub parallel: bool,
}

impl SearchConfig {
    /// One candidate per pure atom.
    pub fn pure_atoms(n_atoms: usize, pieces: usize, dt: f64) -> Self {
        Self {
            pieces,
            candidates: (0..n_atoms).map(|j| ControlLaw::pure(n_atoms, j)).collect(),
            dt,
            max_rollouts: 1 << 16,
            parallel: true,
        }
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..self.clone() }
    }

    fn rollouts(&self) -> Option<usize> {
        self.candidates.len().checked_pow(self.pieces as u32)
    }

    fn validate(&self) -> Result<()> {
        if self.pieces == 0 || self.candidates.is_empty() {
            return Err(Error::InvalidArgument(
                "search needs at least one piece and one candidate".into(),
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt = {}", self.dt)));
        }
        match self.rollouts() {
            Some(r) if r <= self.max_rollouts => Ok(()),
            r => Err(Error::SearchBudget {
                required: r.unwrap_or(usize::MAX),
                limit: self.max_rollouts,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    /// `None` when evaluated at the horizon, where no control acts.
    pub argmin_policy: Option<PolicySchedule>,
    /// Candidate index per piece of the minimizer.
    pub argmin_code: Vec<usize>,
    pub evaluated: usize,
    /// Second-best cost minus the best (infinite with a single policy).
    pub gap: f64,
}

#[derive(Debug, Clone)]
struct Best {
    first: (f64, Vec<usize>),
    second: f64,
    evaluated: usize,
}

impl Best {
    fn empty() -> Self {
        Self {
            first: (f64::INFINITY, Vec::new()),
            second: f64::INFINITY,
            evaluated: 0,
        }
    }

    fn offer(&mut self, c: f64, code: &[usize]) {
        self.evaluated += 1;
        if c < self.first.0 {
            self.second = self.first.0;
            self.first = (c, code.to_vec());
        } else if c < self.second {
            self.second = c;
        }
    }

    /// `other` comes later in lexicographic order.
    fn merge(mut self, other: Best) -> Best {
        let evaluated = self.evaluated + other.evaluated;
        if other.first.0 < self.first.0 {
            self.second = self.first.0.min(other.second);
            self.first = other.first;
        } else {
            self.second = self.second.min(other.first.0);
        }
        self.evaluated = evaluated;
        self
    }
}

struct Search<'a> {
    spec: &'a ProblemSpec,
    cfg: &'a SearchConfig,
    bps: Vec<f64>,
}

impl Search<'_> {
    fn dfs(
        &self,
        stepper: &mut Stepper<'_>,
        rho: &GridDensity,
        acc: f64,
        code: &mut Vec<usize>,
        best: &mut Best,
    ) -> Result<()> {
        let k = code.len();
        if k == self.cfg.pieces {
            let total = acc + self.spec.terminal_value(rho);
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("cost of policy {code:?}")));
            }
            best.offer(total, code);
            return Ok(());
        }
        for (c, law) in self.cfg.candidates.iter().enumerate() {
            let r = advance(stepper, rho, self.bps[k], self.bps[k + 1], law, self.cfg.dt)?;
            code.push(c);
            self.dfs(stepper, &r.terminal, acc + r.running_cost, code, best)?;
            code.pop();
        }
        Ok(())
    }
}

/// Exhaustive minimization of [`cost`] over `K`-piece schedules built from
/// the candidate laws. Shared prefixes are rolled out once.
pub fn value(
    rho0: &GridDensity,
    s: f64,
    spec: &ProblemSpec,
    search: &SearchConfig,
) -> Result<ValueEstimate> {
    spec.validate()?;
    search.validate()?;
    if at_horizon(s, spec) {
        return Ok(ValueEstimate {
            value: spec.terminal_value(rho0),
            argmin_policy: None,
            argmin_code: Vec::new(),
            evaluated: 0,
            gap: f64::INFINITY,
        });
    }
    if !(s < spec.horizon && s >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "s = {s} outside [0, {}]",
            spec.horizon
        )));
    }
    for law in &search.candidates {
        law.check(spec.atoms.len(), rho0.grid())?;
    }
    let k = search.pieces;
    let bps: Vec<f64> = (0..=k)
        .map(|i| {
            if i == k {
                spec.horizon
            } else {
                s + (spec.horizon - s) * i as f64 / k as f64
            }
        })
        .collect();
    let engine = Search {
        spec,
        cfg: search,
        bps: bps.clone(),
    };
    let grid = *rho0.grid();
    let first_level = |c: usize| -> Result<Best> {
        let mut stepper = Stepper::new(spec, grid);
        let mut best = Best::empty();
        let r = advance(
            &mut stepper,
            rho0,
            bps[0],
            bps[1],
            &search.candidates[c],
            search.dt,
        )?;
        let mut code = vec![c];
        engine.dfs(
            &mut stepper,
            &r.terminal,
            r.running_cost,
            &mut code,
            &mut best,
        )?;
        Ok(best)
    };
    let branches: Vec<Result<Best>> = if search.parallel {
        (0..search.candidates.len())
            .into_par_iter()
            .map(first_level)
            .collect()
    } else {
        (0..search.candidates.len()).map(first_level).collect()
    };
    let mut best = Best::empty();
    for b in branches {
        best = best.merge(b?);
    }
    let laws = best
        .first
        .1
        .iter()
        .map(|&c| search.candidates[c].clone())
        .collect();
    Ok(ValueEstimate {
        value: best.first.0,
        argmin_policy: Some(PolicySchedule::new(bps, laws)?),
        argmin_code: best.first.1,
        evaluated: best.evaluated,
        gap: best.second - best.first.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub tolerance: f64,
    /// Candidate index attaining the right-hand minimum.
    pub first_step: usize,
    pub pass: bool,
}

/// Default DPP tolerance `5 dt + 10 h²`.
pub fn dpp_tolerance(dt: f64, h: f64) -> f64 {
    5.0 * dt + 10.0 * h * h
}

/// Compares `V(s, ρ₀)` with `min_c [∫ₛᵗ f + V(t, ρ_t^c)]`, both by brute force.
pub fn check_dpp(
    rho0: &GridDensity,
    s: f64,
    t: f64,
    spec: &ProblemSpec,
    search: &SearchConfig,
) -> Result<DppReport> {
    if !(s < t && t < spec.horizon) {
        return Err(Error::InvalidArgument(format!(
            "need s < t < T, got s = {s}, t = {t}"
        )));
    }
    let lhs = value(rho0, s, spec, search)?.value;
    let mut stepper = Stepper::new(spec, *rho0.grid());
    let mut rhs = f64::INFINITY;
    let mut first_step = 0;
    for (c, law) in search.candidates.iter().enumerate() {
        let r = advance(&mut stepper, rho0, s, t, law, search.dt)?;
        let tail = value(&r.terminal, t, spec, search)?.value;
        let total = r.running_cost + tail;
        if total < rhs {
            rhs = total;
            first_step = c;
        }
    }
    let gap = (lhs - rhs).abs();
    let tolerance = dpp_tolerance(search.dt, rho0.grid().h());
    Ok(DppReport {
        lhs,
        rhs,
        gap,
        tolerance,
        first_step,
        pass: gap <= tolerance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    /// `|ΔV| / (√|Δs| + W₁)` per non-degenerate pair, in input order.
    pub ratios: Vec<f64>,
    pub skipped: usize,
    pub max_ratio: f64,
}

pub type StatePair = ((f64, GridDensity), (f64, GridDensity));

/// Empirical modulus of continuity of the value function.
pub fn check_value_continuity(
    spec: &ProblemSpec,
    pairs: &[StatePair],
    search: &SearchConfig,
) -> Result<ContinuityReport> {
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for ((s1, r1), (s2, r2)) in pairs {
        let w1 = wasserstein1(r1, r2)?;
        let denom = (s1 - s2).abs().sqrt() + w1;
        if denom <= 1e-14 {
            skipped += 1;
            continue;
        }
        let v1 = value(r1, *s1, spec, search)?.value;
        let v2 = value(r2, *s2, spec, search)?.value;
        ratios.push((v1 - v2).abs() / denom);
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(ContinuityReport {
        ratios,
        skipped,
        max_ratio,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityRefinement {
    pub coarse: ContinuityReport,
    pub fine: ContinuityReport,
    /// `|C_fine − C_coarse| / C_coarse`.
    pub relative_change: f64,
}

/// Repeats [`check_value_continuity`] at `dt` and `dt/2`.
pub fn continuity_under_refinement(
    spec: &ProblemSpec,
    pairs: &[StatePair],
    search: &SearchConfig,
) -> Result<ContinuityRefinement> {
    let coarse = check_value_continuity(spec, pairs, search)?;
    let fine = check_value_continuity(spec, pairs, &search.with_dt(search.dt / 2.0))?;
    let relative_change = if coarse.max_ratio > 0.0 {
        (fine.max_ratio - coarse.max_ratio).abs() / coarse.max_ratio
    } else {
        (fine.max_ratio - coarse.max_ratio).abs()
    };
    Ok(ContinuityRefinement {
        coarse,
        fine,
        relative_change,
    })
}
