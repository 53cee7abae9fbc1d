//! Controlled Fokker-Planck evolution, the Gaussian heat-kernel oracle and
//! particle simulation of the McKean-Vlasov SDE.

mod fokker_planck;
mod heat;
mod particles;
mod problem;

pub(crate) use fokker_planck::{advance, Stepper};
pub use fokker_planck::{
    evolve, fokker_planck_step, rollout, time_continuity_modulus, DensityPath, EvolveConfig,
    Rollout, StepDiagnostics, RENORMALIZE_THRESHOLD,
};
pub use heat::{heat_kernel, heat_oracle};
pub use particles::{
    gaussian_bound_check, particle_simulate, BoundCheckConfig, GaussianBoundReport, ParticleConfig,
    ParticleSystem, StartFit, ENVELOPE_TOLERANCE,
};
pub use problem::{
    apply_relaxed, check_assumption_bounds, coefficient, constant_coefficient, local_coefficient,
    terminal, uncontrolled_coefficient, AssumptionBounds, AssumptionReport, CoefficientRule,
    ControlLaw, FeedbackTable, FnCoefficient, PolicySchedule, ProblemSpec, RelaxedControl,
    TerminalRule,
};
