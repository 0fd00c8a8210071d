//! Replication studies comparing the debiased and plug-in estimators.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{simulate_dgp, DgpConfig};
use crate::dgmm::{estimate, DgmmResult, EstimationConfig, InterceptRule};
use crate::error::{Error, Result};
use crate::firststage::{RegressorSpec, RidgeParams};
use crate::moments::capital_only_system;
use crate::seeding;

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    pub n: usize,
    pub reps: usize,
    pub estimation: EstimationConfig,
    /// Parameter summarized in the report.
    pub parameter: String,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    /// Simulated intercepts are zero, so replications profile with `θ_1 = c`;
    /// general estimation back-solves.
    fn default() -> Self {
        let mut estimation = EstimationConfig::default();
        estimation.search.intercept = InterceptRule::Regression;
        Self {
            dgp: DgpConfig::default(),
            n: 1000,
            reps: 500,
            estimation,
            parameter: "theta_k".into(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Cheaper settings for routine runs: ridge-basis first stage, 200
    /// replications, 50 bootstrap draws.
    pub fn fast(dgp: DgpConfig, n: usize) -> Self {
        let mut config = Self {
            dgp,
            n,
            reps: 200,
            ..Self::default()
        };
        config.estimation.first_stage = RegressorSpec::RidgeBasis(RidgeParams::default());
        config.estimation.bootstrap.draws = 50;
        config
    }

    fn truth(&self) -> Result<f64> {
        let names = capital_only_system().param_names();
        let k = names
            .iter()
            .position(|p| *p == self.parameter)
            .ok_or_else(|| Error::Argument(format!("unknown parameter `{}`; expected one of {names:?}", self.parameter)))?;
        Ok(self.dgp.truth()[k])
    }
}

/// One estimator's output in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub estimate: f64,
    pub se: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub debiased: Option<EstimateRecord>,
    pub plug_in: Option<EstimateRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub reps: usize,
    pub mean: f64,
    pub bias: f64,
    /// Population sd of the estimates across replications.
    pub sd: f64,
    pub mean_se: f64,
    pub rmse: f64,
    pub coverage: f64,
    /// Binomial standard error of the coverage estimate.
    pub coverage_se: f64,
}

impl EstimatorSummary {
    pub fn from_records(records: &[EstimateRecord], truth: f64) -> Option<Self> {
        if records.is_empty() {
            return None;
        }
        let m = records.len() as f64;
        let mean = records.iter().map(|r| r.estimate).sum::<f64>() / m;
        let var = records.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / m;
        let mse = records.iter().map(|r| (r.estimate - truth).powi(2)).sum::<f64>() / m;
        let coverage = records.iter().filter(|r| r.covered).count() as f64 / m;
        Some(Self {
            reps: records.len(),
            mean,
            bias: mean - truth,
            sd: var.sqrt(),
            mean_se: records.iter().map(|r| r.se).sum::<f64>() / m,
            rmse: mse.sqrt(),
            coverage,
            coverage_se: (coverage * (1.0 - coverage) / m).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: ExperimentConfig,
    pub truth: f64,
    pub reps: usize,
    pub failed: usize,
    pub debiased: Option<EstimatorSummary>,
    pub plug_in: Option<EstimatorSummary>,
    pub records: Vec<RepRecord>,
}

impl McReport {
    /// Estimates of one estimator across successful replications, in order.
    pub fn estimates(&self, debiased: bool) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| if debiased { r.debiased } else { r.plug_in })
            .map(|e| e.estimate)
            .collect()
    }
}

fn record_of(result: &DgmmResult, parameter: &str, truth: f64) -> Result<EstimateRecord> {
    let k = result
        .param_names
        .iter()
        .position(|p| p == parameter)
        .ok_or_else(|| Error::Argument(format!("estimator has no parameter `{parameter}`")))?;
    let (lo, hi) = result.ci[k].ok_or_else(|| Error::State(format!("no interval for `{parameter}`; it was profiled out")))?;
    Ok(EstimateRecord {
        estimate: result.theta[k],
        se: result.se[k].unwrap_or(f64::NAN),
        covered: lo <= truth && truth <= hi,
    })
}

/// Runs one replication: simulate, estimate, record.
pub fn run_replication(config: &ExperimentConfig, rep: usize, truth: f64) -> RepRecord {
    let attempt = || -> Result<(Option<EstimateRecord>, Option<EstimateRecord>)> {
        let sim = simulate_dgp(&config.dgp, config.n, seeding::derive_seed(config.seed, &[rep as u64, 0]))?;
        let estimation = EstimationConfig {
            seed: seeding::derive_seed(config.seed, &[rep as u64, 1]),
            ..config.estimation.clone()
        };
        let est = estimate(&sim.panel, &capital_only_system(), &estimation)?;
        let dgmm = est.debiased.as_ref().map(|r| record_of(r, &config.parameter, truth)).transpose()?;
        let pi = est.plug_in.as_ref().map(|r| record_of(r, &config.parameter, truth)).transpose()?;
        Ok((dgmm, pi))
    };
    match attempt() {
        Ok((debiased, plug_in)) => RepRecord {
            rep,
            debiased,
            plug_in,
            error: None,
        },
        Err(e) => RepRecord {
            rep,
            debiased: None,
            plug_in: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every replication (in parallel, results in replication order) and
/// aggregates over the successful ones.
pub fn run_experiment(config: &ExperimentConfig) -> Result<McReport> {
    if config.reps == 0 {
        return Err(Error::Argument("need at least one replication".into()));
    }
    config.dgp.validate()?;
    let truth = config.truth()?;
    let records: Vec<RepRecord> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_replication(config, rep, truth))
        .collect();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed as f64 > MAX_FAILURE_SHARE * config.reps as f64 {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Experiment(format!(
            "{failed} of {} replications failed; first failure: {first}",
            config.reps
        )));
    }
    let collect = |pick: fn(&RepRecord) -> Option<EstimateRecord>| -> Vec<EstimateRecord> {
        records.iter().filter_map(pick).collect()
    };
    Ok(McReport {
        truth,
        reps: config.reps,
        failed,
        debiased: EstimatorSummary::from_records(&collect(|r| r.debiased), truth),
        plug_in: EstimatorSummary::from_records(&collect(|r| r.plug_in), truth),
        config: config.clone(),
        records,
    })
}

pub const TABLE_HEADER: [&str; 9] = [
    "n",
    "PI Bias",
    "DGMM Bias",
    "PI SE",
    "DGMM SE",
    "PI RMSE",
    "DGMM RMSE",
    "PI 95Cvg",
    "DGMM 95Cvg",
];

/// One CSV row per report in the bias/SE/RMSE/coverage layout. Missing
/// estimators leave empty cells.
pub fn write_table_csv<W: Write>(reports: &[McReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TABLE_HEADER)?;
    let cell = |s: Option<EstimatorSummary>, f: fn(&EstimatorSummary) -> f64| s.map(|s| format!("{}", f(&s))).unwrap_or_default();
    for r in reports {
        let (pi, dg) = (r.plug_in, r.debiased);
        w.write_record([
            r.config.n.to_string(),
            cell(pi, |s| s.bias),
            cell(dg, |s| s.bias),
            cell(pi, |s| s.mean_se),
            cell(dg, |s| s.mean_se),
            cell(pi, |s| s.rmse),
            cell(dg, |s| s.rmse),
            cell(pi, |s| s.coverage),
            cell(dg, |s| s.coverage),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<table writer>".into(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_decomposes_into_bias_and_spread() {
        let recs: Vec<EstimateRecord> = [0.9, 1.2, 1.05, 0.97]
            .iter()
            .map(|&e| EstimateRecord {
                estimate: e,
                se: 0.1,
                covered: (e - 1.0f64).abs() < 0.1,
            })
            .collect();
        let s = EstimatorSummary::from_records(&recs, 1.0).unwrap();
        assert!((s.rmse.powi(2) - (s.bias.powi(2) + s.sd.powi(2))).abs() < 1e-12);
        assert_eq!(s.coverage, 0.75);
    }

    #[test]
    fn empty_records_have_no_summary() {
        assert!(EstimatorSummary::from_records(&[], 1.0).is_none());
    }
}
