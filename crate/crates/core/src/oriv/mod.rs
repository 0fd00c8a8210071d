//! Orthogonal instruments built by a penalized, generated-regressor program.

mod design;
mod estimate;
mod lasso;
mod penalty;

pub use design::{
    build_design_general, build_design_production, fit_stage_dictionaries, production_regressors, ConditionalMean,
    GeneralDesignInputs, GeneratedDesign, LearnedMean, LinearProjection,
};
pub use estimate::{estimate_orivs, solve_oriv, FoldOriv, LowDim, OrivConfig, OrivFit, OrivSet};
pub use lasso::{coordinate_descent, init_beta_lowdim, soft_threshold, CdOptions, LassoProblem, LassoSolution, KKT_TOL};
pub use penalty::{default_c2, lambda_rule, update_loadings, LOADING_FLOOR};
