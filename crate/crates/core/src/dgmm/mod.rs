//! Debiased GMM: moment assembly, profiling, minimization, sandwich
//! inference, and the plug-in benchmark.

mod debias;
mod gmm;
mod optimize;
mod pipeline;
mod profile;
mod psi;

pub use debias::{halving_check, HalvingCheck};
pub use gmm::{
    gmm_objective, jacobian_fd, jacobian_fd_scaled, minimize_gmm, minimize_with_weight, point_estimate, profiled_sandwich, sandwich,
    Diagnostics, DgmmResult, GmmProblem, PsiPoint, SearchConfig, Weighting,
};
pub use optimize::{golden_section, grid_golden, nelder_mead, nelder_mead_restarts, Minimum, NelderMeadOptions};
pub use pipeline::{
    estimate, estimate_debiased, estimate_naive_pi, fit_first_stage, fit_nuisances, fold_preliminary, BootstrapConfig,
    EstimationConfig, Estimates, Nuisances,
};
pub use profile::{profile_parameters, profile_parameters_with, profiling_scores, InterceptRule, UNIT_ROOT_GUARD};
pub use psi::{assemble_psi, psi_bar, psi_matrix, psi_matrix_with, psi_second_moment, MomentData};
