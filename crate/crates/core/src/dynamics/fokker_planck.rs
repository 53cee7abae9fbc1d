//! Explicit finite-volume solver for the controlled nonlinear
//! Fokker-Planck equation `∂ₜρ = ½σ²∂²ₓρ − ∂ₓ(b ρ)`.
//!
//! Node `i` owns the control volume `[x_i − h/2, x_i + h/2]` clipped to the
//! domain, so the volumes are the trapezoid weights and the discrete mass is
//! exactly the trapezoid integral. Face fluxes use Scharfetter-Gummel
//! exponential fitting, which is central diffusion for `b = 0`, tends to
//! upwinding when advection dominates, and keeps every density of the form
//! `exp(−Ψ)` with `Ψ′ = −2b/σ²` stationary. Boundary faces carry no flux.

use std::io::Write;

use super::problem::{ControlLaw, PolicySchedule, ProblemSpec};
use crate::densities::{check_d1r_membership, GridDensity};
use crate::error::{Error, Result};
use crate::weightspace::{weighted_l2_norm, Grid, WeightField};

/// Mass drift above which a step renormalizes its output.
pub const RENORMALIZE_THRESHOLD: f64 = 1e-12;

/// Bernoulli function `z / (eᶻ − 1)`.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        1.0 - 0.5 * z + z * z / 12.0
    } else {
        z / z.exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Mass after the update minus mass before, prior to any renormalization.
    pub mass_drift: f64,
    pub renormalized: bool,
    pub max_face_drift: f64,
    pub stability_bound: f64,
}

/// Reusable buffers for stepping one problem on one grid.
pub(crate) struct Stepper<'a> {
    spec: &'a ProblemSpec,
    grid: Grid,
    nodes: Vec<f64>,
    faces: Vec<f64>,
    face_drift: Vec<f64>,
    node_cost: Vec<f64>,
    tmp: Vec<f64>,
    flux: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(spec: &'a ProblemSpec, grid: Grid) -> Self {
        let n = grid.len();
        Self {
            spec,
            grid,
            nodes: grid.nodes(),
            faces: grid.faces(),
            face_drift: vec![0.0; n - 1],
            node_cost: vec![0.0; n],
            tmp: vec![0.0; n],
            flux: vec![0.0; n - 1],
        }
    }

    fn fill_face_drift(&mut self, t: f64, rho: &GridDensity, law: &ControlLaw) -> Result<()> {
        let spec = self.spec;
        let m = self.faces.len();
        let tmp = &mut self.tmp[..m];
        if !spec.drift.uses_control() {
            spec.drift
                .eval_many(t, &self.faces, rho, &spec.atoms[0], &mut self.face_drift);
        } else {
            self.face_drift.fill(0.0);
            for j in law.active_atoms(spec.atoms.len()) {
                spec.drift
                    .eval_many(t, &self.faces, rho, &spec.atoms[j], tmp);
                match law {
                    ControlLaw::Relaxed(a) => {
                        let w = a.weights()[j];
                        for (d, v) in self.face_drift.iter_mut().zip(tmp.iter()) {
                            *d += w * v;
                        }
                    }
                    ControlLaw::Feedback(_) => {
                        for (f, (d, v)) in self.face_drift.iter_mut().zip(tmp.iter()).enumerate() {
                            *d += 0.5 * (law.weight_at(f, j) + law.weight_at(f + 1, j)) * v;
                        }
                    }
                }
            }
        }
        if self.face_drift.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite(format!("drift at t = {t}")));
        }
        Ok(())
    }

    /// `Σ f(t, x, ρ, α) ρ(x) h`.
    pub(crate) fn running_rate(
        &mut self,
        t: f64,
        rho: &GridDensity,
        law: &ControlLaw,
    ) -> Result<f64> {
        let spec = self.spec;
        if spec.running_cost.is_zero() {
            return Ok(0.0);
        }
        if !spec.running_cost.uses_control() {
            spec.running_cost
                .eval_many(t, &self.nodes, rho, &spec.atoms[0], &mut self.node_cost);
        } else {
            self.node_cost.fill(0.0);
            for j in law.active_atoms(spec.atoms.len()) {
                spec.running_cost
                    .eval_many(t, &self.nodes, rho, &spec.atoms[j], &mut self.tmp);
                for (i, (c, v)) in self.node_cost.iter_mut().zip(&self.tmp).enumerate() {
                    *c += law.weight_at(i, j) * v;
                }
            }
        }
        let rate: f64 = self
            .node_cost
            .iter()
            .zip(rho.values())
            .enumerate()
            .map(|(i, (c, r))| c * r * self.grid.weight(i))
            .sum();
        if !rate.is_finite() {
            return Err(Error::NonFinite(format!("running cost at t = {t}")));
        }
        Ok(rate)
    }

    pub(crate) fn step(
        &mut self,
        rho: &GridDensity,
        t: f64,
        dt: f64,
        law: &ControlLaw,
    ) -> Result<(GridDensity, StepDiagnostics)> {
        self.fill_face_drift(t, rho, law)?;
        let max_face_drift = self.face_drift.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        let h = self.grid.h();
        let bound = self.spec.stability_bound(h, max_face_drift);
        if dt > bound * (1.0 + 1e-9) {
            return Err(Error::Stability { dt, bound });
        }
        let diff = 0.5 * self.spec.sigma * self.spec.sigma;
        let rv = rho.values();
        for (f, flux) in self.flux.iter_mut().enumerate() {
            let pe = self.face_drift[f] * h / diff;
            *flux = diff / h * (bernoulli(-pe) * rv[f] - bernoulli(pe) * rv[f + 1]);
        }
        let n = self.grid.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let inflow = if i > 0 { self.flux[i - 1] } else { 0.0 };
            let outflow = if i + 1 < n { self.flux[i] } else { 0.0 };
            out.push(rv[i] + dt / self.grid.weight(i) * (inflow - outflow));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("density after step at t = {t}")));
        }
        let before = rho.mass();
        let after = self.grid.integrate(&out);
        let mass_drift = after - before;
        let renormalized = mass_drift.abs() > RENORMALIZE_THRESHOLD;
        if renormalized {
            let scale = before / after;
            out.iter_mut().for_each(|v| *v *= scale);
        }
        Ok((
            GridDensity::from_values_unchecked(self.grid, out),
            StepDiagnostics {
                mass_drift,
                renormalized,
                max_face_drift,
                stability_bound: bound,
            },
        ))
    }
}

/// One explicit step of the controlled Fokker-Planck equation.
pub fn fokker_planck_step(
    rho: &GridDensity,
    t: f64,
    dt: f64,
    law: &ControlLaw,
    spec: &ProblemSpec,
) -> Result<(GridDensity, StepDiagnostics)> {
    spec.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt = {dt}")));
    }
    law.check(spec.atoms.len(), rho.grid())?;
    Stepper::new(spec, *rho.grid()).step(rho, t, dt, law)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveConfig {
    pub dt: f64,
    /// Save every this many steps; the initial and final densities are always kept.
    pub save_every: usize,
    /// Run the weighted-space membership check on every saved density.
    pub check_membership: bool,
}

impl EvolveConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            save_every: usize::MAX,
            check_membership: true,
        }
    }

    pub fn saving_every(mut self, steps: usize) -> Self {
        self.save_every = steps.max(1);
        self
    }
}

#[derive(Debug, Clone)]
pub struct DensityPath {
    pub times: Vec<f64>,
    pub densities: Vec<GridDensity>,
    /// Left-endpoint quadrature of `∫ Σ f ρ h dt`.
    pub running_cost: f64,
    pub max_mass_drift: f64,
    pub renormalizations: usize,
    pub steps: usize,
}

impl DensityPath {
    pub fn terminal(&self) -> &GridDensity {
        self.densities
            .last()
            .expect("a path holds at least the initial density")
    }

    /// Long-format CSV with columns `t, x, value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "value"])?;
        for (t, rho) in self.times.iter().zip(&self.densities) {
            for (i, v) in rho.values().iter().enumerate() {
                w.write_record([t.to_string(), rho.grid().node(i).to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of uniform substeps used to cross `[a, b]` with step at most `dt`.
pub(crate) fn substeps(a: f64, b: f64, dt: f64) -> usize {
    (((b - a) / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

pub(crate) fn check_span(
    rho0: &GridDensity,
    s: f64,
    t: f64,
    policy: &PolicySchedule,
    spec: &ProblemSpec,
    dt: f64,
) -> Result<()> {
    spec.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt = {dt}")));
    }
    if !(t > s) {
        return Err(Error::InvalidArgument(format!(
            "need s < t, got s = {s}, t = {t}"
        )));
    }
    if t > spec.horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "t = {t} exceeds the horizon {}",
            spec.horizon
        )));
    }
    if !policy.covers(s, t) {
        return Err(Error::InvalidControl(format!(
            "policy does not cover [{s}, {t}]"
        )));
    }
    policy.check(spec.atoms.len(), rho0.grid())
}

/// Evolves `rho0` from `s` to `t` under `policy`, saving densities along
/// the way and validating each saved density in the weighted space.
pub fn evolve(
    rho0: &GridDensity,
    s: f64,
    t: f64,
    policy: &PolicySchedule,
    spec: &ProblemSpec,
    w: &WeightField,
    cfg: &EvolveConfig,
) -> Result<DensityPath> {
    check_span(rho0, s, t, policy, spec, cfg.dt)?;
    rho0.grid().ensure_matches(w.grid())?;
    let check = |time: f64, rho: &GridDensity| -> Result<()> {
        if cfg.check_membership {
            let report = check_d1r_membership(rho, w);
            if !report.pass {
                let flags: Vec<String> = report.flags.iter().map(|f| f.to_string()).collect();
                return Err(Error::ConservativityViolation {
                    time,
                    detail: flags.join(", "),
                });
            }
        }
        Ok(())
    };
    check(s, rho0)?;

    let mut stepper = Stepper::new(spec, *rho0.grid());
    let mut path = DensityPath {
        times: vec![s],
        densities: vec![rho0.clone()],
        running_cost: 0.0,
        max_mass_drift: 0.0,
        renormalizations: 0,
        steps: 0,
    };
    let mut rho = rho0.clone();
    let segments = policy.segments(s, t);
    for (k, &(a, b, law)) in segments.iter().enumerate() {
        let m = substeps(a, b, cfg.dt);
        let tau = (b - a) / m as f64;
        for j in 0..m {
            let now = a + j as f64 * tau;
            path.running_cost += tau * stepper.running_rate(now, &rho, law)?;
            let (next, diag) = stepper.step(&rho, now, tau, law)?;
            rho = next;
            path.steps += 1;
            path.max_mass_drift = path.max_mass_drift.max(diag.mass_drift.abs());
            path.renormalizations += diag.renormalized as usize;
            let last = k + 1 == segments.len() && j + 1 == m;
            if last || path.steps.is_multiple_of(cfg.save_every) {
                let time = if j + 1 == m { b } else { now + tau };
                check(time, &rho)?;
                path.times.push(time);
                path.densities.push(rho.clone());
            }
        }
    }
    Ok(path)
}

/// Terminal density and accumulated running cost of one rollout, without
/// saving intermediate densities or checking membership.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub terminal: GridDensity,
    pub running_cost: f64,
}

/// Advances `rho` across `[a, b]` under a single control law.
pub(crate) fn advance(
    stepper: &mut Stepper<'_>,
    rho: &GridDensity,
    a: f64,
    b: f64,
    law: &ControlLaw,
    dt: f64,
) -> Result<Rollout> {
    let m = substeps(a, b, dt);
    let tau = (b - a) / m as f64;
    let mut cur = rho.clone();
    let mut cost = 0.0;
    for j in 0..m {
        let now = a + j as f64 * tau;
        cost += tau * stepper.running_rate(now, &cur, law)?;
        cur = stepper.step(&cur, now, tau, law)?.0;
    }
    Ok(Rollout {
        terminal: cur,
        running_cost: cost,
    })
}

pub fn rollout(
    rho0: &GridDensity,
    s: f64,
    t: f64,
    policy: &PolicySchedule,
    spec: &ProblemSpec,
    dt: f64,
) -> Result<Rollout> {
    check_span(rho0, s, t, policy, spec, dt)?;
    let mut stepper = Stepper::new(spec, *rho0.grid());
    let mut out = Rollout {
        terminal: rho0.clone(),
        running_cost: 0.0,
    };
    for (a, b, law) in policy.segments(s, t) {
        let r = advance(&mut stepper, &out.terminal, a, b, law, dt)?;
        out.terminal = r.terminal;
        out.running_cost += r.running_cost;
    }
    Ok(out)
}

/// `max_k ‖ρ_{k+1} − ρ_k‖_{L²(γ)} + ‖Dρ_{k+1} − Dρ_k‖_{L²(γ)}` over the
/// saved densities taken `stride` saves apart.
pub fn time_continuity_modulus(path: &DensityPath, stride: usize, w: &WeightField) -> Result<f64> {
    let stride = stride.max(1);
    let mut worst: f64 = 0.0;
    let mut k = 0;
    while k + stride < path.densities.len() {
        let a = &path.densities[k];
        let b = &path.densities[k + stride];
        let diff: Vec<f64> = b
            .values()
            .iter()
            .zip(a.values())
            .map(|(x, y)| x - y)
            .collect();
        let ddiff = a.grid().derivative(&diff);
        worst = worst.max(weighted_l2_norm(&diff, w)? + weighted_l2_norm(&ddiff, w)?);
        k += stride;
    }
    Ok(worst)
}
