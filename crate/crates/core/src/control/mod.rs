//! Cost and value of the control problem, the dynamic programming
//! principle, and the HJB equation on density space.

mod hamiltonian;
mod test_functional;
mod value;

pub use hamiltonian::{
    hamiltonian, hjb_residual, min_hamiltonian, probe_basis, probe_derivative,
    terminal_condition_gap, DerivativeProbeConfig, HjbResidualReport, ProbedDerivative, ValueFn,
};
pub use test_functional::{
    check_smoothness, check_viscosity, gradient_energy, SmoothnessReport, TestFunctional, Touching,
    ViscosityReport,
};
pub use value::{
    check_dpp, check_value_continuity, continuity_under_refinement, cost, dpp_tolerance, value,
    ContinuityRefinement, ContinuityReport, DppReport, SearchConfig, StatePair, ValueEstimate,
};
