//! Run configuration: one TOML table per subcommand, every key optional.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dgmm::data::{vars, PanelSchema};
use dgmm::dgmm::EstimationConfig;
use dgmm::montecarlo::{DgpConfig, ExperimentConfig};
use dgmm::moments::ModelKind;
use dgmm::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulate: SimulateSection,
    pub estimate: EstimateSection,
    pub montecarlo: MonteCarloSection,
    pub lasso_check: LassoCheckSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Argument(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }
}

/// Picks the investment-shock design on top of the DGP table.
fn apply_design(dgp: &DgpConfig, design: Option<usize>) -> Result<DgpConfig> {
    match design {
        Some(d) => Ok(DgpConfig {
            invest_shock_sd: DgpConfig::design(d)?.invest_shock_sd,
            ..*dgp
        }),
        None => Ok(*dgp),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    /// 1, 2 or 3; overrides `dgp.invest_shock_sd` when set.
    pub design: Option<usize>,
    pub seed: u64,
    pub dgp: DgpConfig,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n: 1000,
            design: None,
            seed: 0,
            dgp: DgpConfig::default(),
        }
    }
}

impl SimulateSection {
    pub fn resolved_dgp(&self) -> Result<DgpConfig> {
        let dgp = apply_design(&self.dgp, self.design)?;
        dgp.validate()?;
        Ok(dgp)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    #[default]
    Both,
    Dgmm,
    Pi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub panel: Option<PathBuf>,
    pub model: ModelKind,
    pub estimator: EstimatorChoice,
    pub firm_id: String,
    pub period: String,
    /// Canonical variable name (`y`, `k`, `i`, `l`, `e`) to CSV column.
    pub columns: BTreeMap<String, String>,
    pub estimation: EstimationConfig,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            panel: None,
            model: ModelKind::CapitalOnly,
            estimator: EstimatorChoice::Both,
            firm_id: "firm_id".into(),
            period: "period".into(),
            columns: BTreeMap::new(),
            estimation: EstimationConfig::default(),
        }
    }
}

impl EstimateSection {
    pub fn schema(&self) -> PanelSchema {
        let needed: &[&str] = match self.model {
            ModelKind::CapitalOnly => &[vars::OUTPUT, vars::CAPITAL, vars::INVESTMENT],
            ModelKind::CobbDouglasTwoInput => &[vars::OUTPUT, vars::LABOR, vars::CAPITAL, vars::INTERMEDIATES],
        };
        PanelSchema {
            firm_id: self.firm_id.clone(),
            period: self.period.clone(),
            variables: needed
                .iter()
                .map(|v| (v.to_string(), self.columns.get(*v).cloned().unwrap_or_else(|| v.to_string())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub design: Option<usize>,
    /// Sample sizes; one table row each.
    pub n: Vec<usize>,
    pub reps: usize,
    pub parameter: String,
    pub seed: u64,
    pub histogram_bins: usize,
    pub dgp: DgpConfig,
    pub estimation: EstimationConfig,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        let base = ExperimentConfig::default();
        Self {
            design: Some(1),
            n: vec![base.n],
            reps: base.reps,
            parameter: base.parameter,
            seed: base.seed,
            histogram_bins: 20,
            dgp: base.dgp,
            estimation: base.estimation,
        }
    }
}

impl MonteCarloSection {
    /// Swaps in the cheap settings of [`ExperimentConfig::fast`].
    pub fn make_fast(&mut self) {
        let fast = ExperimentConfig::fast(self.dgp, self.n.first().copied().unwrap_or(1000));
        self.reps = fast.reps;
        self.estimation.first_stage = fast.estimation.first_stage;
        self.estimation.bootstrap.draws = fast.estimation.bootstrap.draws;
    }

    pub fn experiments(&self) -> Result<Vec<ExperimentConfig>> {
        if self.n.is_empty() {
            return Err(Error::Argument("montecarlo needs at least one sample size".into()));
        }
        let dgp = apply_design(&self.dgp, self.design)?;
        dgp.validate()?;
        Ok(self
            .n
            .iter()
            .map(|&n| ExperimentConfig {
                dgp,
                n,
                reps: self.reps,
                estimation: self.estimation.clone(),
                parameter: self.parameter.clone(),
                seed: self.seed,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoCheckSection {
    pub n: Vec<usize>,
    pub reps: usize,
    pub dim: usize,
    pub relevant: usize,
    pub equations: usize,
    pub c1: f64,
    pub c2: f64,
    pub lambda: Option<f64>,
    pub noise_sd: f64,
    pub perturb: bool,
    pub seed: u64,
}

impl Default for LassoCheckSection {
    fn default() -> Self {
        let base = dgmm::montecarlo::LassoOracleConfig::default();
        Self {
            n: vec![500, 1000, 5000, 10000],
            reps: base.reps,
            dim: base.dim,
            relevant: base.relevant,
            equations: base.equations,
            c1: base.c1,
            c2: base.c2,
            lambda: base.lambda,
            noise_sd: base.noise_sd,
            perturb: base.perturb,
            seed: base.seed,
        }
    }
}

impl LassoCheckSection {
    pub fn oracle(&self, n: usize) -> dgmm::montecarlo::LassoOracleConfig {
        dgmm::montecarlo::LassoOracleConfig {
            n,
            reps: self.reps,
            dim: self.dim,
            relevant: self.relevant,
            equations: self.equations,
            c1: self.c1,
            c2: self.c2,
            lambda: self.lambda,
            noise_sd: self.noise_sd,
            perturb: self.perturb,
            seed: self.seed,
        }
    }
}
