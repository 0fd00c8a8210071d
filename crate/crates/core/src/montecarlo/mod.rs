//! Simulation studies: the production-panel designs, replication reports,
//! the sparse-recovery check of the penalized solver, and histograms.

mod dgp;
mod experiment;
mod histogram;
mod lasso_oracle;

pub use dgp::{simulate_dgp, simulate_firm, DgpConfig, FirmPath, SimulatedPanel, MAX_RESIMULATION_SHARE};
pub use experiment::{
    run_experiment, run_replication, write_table_csv, EstimateRecord, EstimatorSummary, ExperimentConfig, McReport,
    RepRecord, MAX_FAILURE_SHARE, TABLE_HEADER,
};
pub use histogram::{histogram_export, write_histogram_csv, Histogram};
pub use lasso_oracle::{lasso_oracle_check, oracle_replication, write_oracle_csv, LassoOracleConfig, LassoOracleResult};
