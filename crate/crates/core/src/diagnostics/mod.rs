//! Reference oracles and checkers that do not share code paths with the solvers.
//!
//! Hypergradients come from three independent routes (closed form, the
//! pseudoinverse formula on Hessians, and finite differences of `φ_σ`), so
//! each can be used to judge the others. The remaining checks measure the
//! structural constants the schedules rely on: PL ratios, set stability,
//! smoothness, and the GALET and Prox-EB stationarity notions.

mod discontinuity;
mod hypergradient;
mod landscape;
mod sets;
mod stationarity;

pub use discontinuity::{grid_hyperobjective, projected_ll_hyperobjective};
pub use hypergradient::{exact_hypergradient_pinv, fd_hypergradient, implicit_gradient_reference, FdHypergradient};
pub use landscape::{
    contraction_check, gradient_check, hessian_eigen_check, penalty_gap_curve, pl_ratio_certificate, smoothness_probe,
    ContractionRow, GradientCheck, PlRatio, ProbeRegion, SmoothnessProbe,
};
pub use sets::{
    hausdorff_distance, sample_solution_set, set_distance, set_lipschitz_check, SetLipschitzRow, SolutionSetApprox,
};
pub use stationarity::{galet_residuals, prox_eb_check, GaletResiduals, ProxEbReport};
