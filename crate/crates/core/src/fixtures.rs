//! Problems with known structure used by the tests and the experiment runner.

use std::sync::Arc;

use crate::densities::GridDensity;
use crate::dynamics::{
    constant_coefficient, local_coefficient, terminal, uncontrolled_coefficient, AssumptionBounds,
    CoefficientRule, ProblemSpec,
};

/// Drift `u` with atoms `±1`, no running cost and terminal cost `g = x`.
/// Its value is `V(t, ρ) = mean(ρ) − (T − t)`, attained by `u ≡ −1`.
pub fn pm_one_drift(horizon: f64) -> ProblemSpec {
    ProblemSpec {
        name: "pm-one-drift".into(),
        drift: local_coefficient(|_, _, u| u[0]),
        sigma: 0.5,
        running_cost: constant_coefficient(0.0),
        terminal_cost: terminal(|x, _| x),
        atoms: vec![vec![-1.0], vec![1.0]],
        horizon,
        bounds: AssumptionBounds {
            k1: 0.0,
            k2: 1.0,
            k3: 8.0,
        },
    }
}

/// Closed-form value of [`pm_one_drift`], ignoring truncation of the domain.
pub fn pm_one_value(t: f64, rho: &GridDensity, horizon: f64) -> f64 {
    rho.mean() - (horizon - t)
}

/// No drift, running cost `c`, no terminal cost; `V(t, ρ) = c (T − t)`.
pub fn control_irrelevant(c: f64, horizon: f64) -> ProblemSpec {
    ProblemSpec {
        name: "control-irrelevant".into(),
        drift: constant_coefficient(0.0),
        sigma: 1.0,
        running_cost: constant_coefficient(c),
        terminal_cost: terminal(|_, _| 0.0),
        atoms: vec![vec![-1.0], vec![1.0]],
        horizon,
        bounds: AssumptionBounds {
            k1: 0.0,
            k2: 0.0,
            k3: c.abs(),
        },
    }
}

/// Pure diffusion with a single inert atom.
pub fn zero_drift(sigma: f64, horizon: f64) -> ProblemSpec {
    ProblemSpec {
        name: "zero-drift".into(),
        drift: constant_coefficient(0.0),
        sigma,
        running_cost: constant_coefficient(0.0),
        terminal_cost: terminal(|_, _| 0.0),
        atoms: vec![vec![0.0]],
        horizon,
        bounds: AssumptionBounds {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
        },
    }
}

/// `b = −x`, `σ = 1`; the stationary law is `N(0, ½)`.
pub fn ornstein_uhlenbeck(horizon: f64) -> ProblemSpec {
    ProblemSpec {
        name: "ornstein-uhlenbeck".into(),
        drift: uncontrolled_coefficient(|_, x| -x),
        sigma: 1.0,
        running_cost: constant_coefficient(0.0),
        terminal_cost: terminal(|_, _| 0.0),
        atoms: vec![vec![0.0]],
        horizon,
        bounds: AssumptionBounds {
            k1: 1.0,
            k2: 8.0,
            k3: 0.0,
        },
    }
}

/// Bounded drift `clip(−x, −1, 1) + ½u` with atoms `±1` and quadratic running cost.
pub fn clipped_ou(horizon: f64) -> ProblemSpec {
    ProblemSpec {
        name: "clipped-ou".into(),
        drift: local_coefficient(|_, x, u| (-x).clamp(-1.0, 1.0) + 0.5 * u[0]),
        sigma: 1.0,
        running_cost: local_coefficient(|_, x, u| 0.1 * x * x / (1.0 + x * x) + 0.05 * u[0] * u[0]),
        terminal_cost: terminal(|x, _| x.abs().min(2.0)),
        atoms: vec![vec![-1.0], vec![1.0]],
        horizon,
        bounds: AssumptionBounds {
            k1: 1.0,
            k2: 1.5,
            k3: 2.15,
        },
    }
}

/// Running cost `u²` on atoms `{0, 1}` with no drift.
pub fn quadratic_control_cost(horizon: f64) -> ProblemSpec {
    ProblemSpec {
        name: "quadratic-control-cost".into(),
        drift: constant_coefficient(0.0),
        sigma: 1.0,
        running_cost: local_coefficient(|_, _, u| u[0] * u[0]),
        terminal_cost: terminal(|_, _| 0.0),
        atoms: vec![vec![0.0], vec![1.0]],
        horizon,
        bounds: AssumptionBounds {
            k1: 0.0,
            k2: 0.0,
            k3: 1.0,
        },
    }
}

/// Attraction toward the mean of the current law, `b = −k (x − ∫ y ρ(dy))`.
pub struct MeanReversion {
    pub strength: f64,
}

impl CoefficientRule for MeanReversion {
    fn eval(&self, _: f64, x: f64, rho: &GridDensity, _: &[f64]) -> f64 {
        -self.strength * (x - rho.mean())
    }

    fn eval_many(&self, _: f64, xs: &[f64], rho: &GridDensity, _: &[f64], out: &mut [f64]) {
        let m = rho.mean();
        for (o, x) in out.iter_mut().zip(xs) {
            *o = -self.strength * (x - m);
        }
    }

    fn uses_control(&self) -> bool {
        false
    }
}

/// McKean-Vlasov drift toward the population mean plus a constant push.
pub fn mean_field_attraction(strength: f64, horizon: f64) -> ProblemSpec {
    ProblemSpec {
        name: "mean-field-attraction".into(),
        drift: Arc::new(MeanReversion { strength }),
        sigma: 1.0,
        running_cost: constant_coefficient(0.0),
        terminal_cost: terminal(|_, _| 0.0),
        atoms: vec![vec![0.0]],
        horizon,
        bounds: AssumptionBounds {
            k1: 2.0 * strength,
            k2: 16.0 * strength,
            k3: 0.0,
        },
    }
}

/// Looks a fixture up by its configuration name.
pub fn by_name(name: &str, horizon: f64) -> Option<ProblemSpec> {
    Some(match name {
        "pm-one-drift" => pm_one_drift(horizon),
        "control-irrelevant" => control_irrelevant(1.0, horizon),
        "zero-drift" => zero_drift(1.0, horizon),
        "ornstein-uhlenbeck" => ornstein_uhlenbeck(horizon),
        "clipped-ou" => clipped_ou(horizon),
        "quadratic-control-cost" => quadratic_control_cost(horizon),
        "mean-field-attraction" => mean_field_attraction(1.0, horizon),
        _ => return None,
    })
}

pub const FIXTURE_NAMES: [&str; 7] = [
    "pm-one-drift",
    "control-irrelevant",
    "zero-drift",
    "ornstein-uhlenbeck",
    "clipped-ou",
    "quadratic-control-cost",
    "mean-field-attraction",
];
