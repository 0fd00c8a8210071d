//! End-to-end estimation: folds, cross-fitted first stages, preliminary
//! plug-in fits per fold, orthogonal instruments, then the debiased and the
//! plug-in estimators.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gmm::{minimize_gmm, point_estimate, DgmmResult, PsiPoint, SearchConfig, Weighting};
use super::psi::MomentData;
use crate::data::{make_folds, FoldPlan, PanelDataset};
use crate::error::{Error, Result};
use crate::firststage::{crossfit_eta, CrossfitEta, RegressorSpec};
use crate::moments::MomentSystem;
use crate::oriv::{estimate_orivs, OrivConfig, OrivSet};
use crate::seeding;
use crate::stats;

/// Resampling controls for the plug-in standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub draws: usize,
    /// Largest tolerated share of failed resamples.
    pub max_skip_share: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            draws: 200,
            max_skip_share: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub n_folds: usize,
    pub first_stage: RegressorSpec,
    pub oriv: OrivConfig,
    pub search: SearchConfig,
    pub weighting: Weighting,
    pub bootstrap: BootstrapConfig,
    pub debiased: bool,
    pub plug_in: bool,
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            first_stage: RegressorSpec::default(),
            oriv: OrivConfig::default(),
            search: SearchConfig::default(),
            weighting: Weighting::Identity,
            bootstrap: BootstrapConfig::default(),
            debiased: true,
            plug_in: true,
            seed: 0,
        }
    }
}

impl EstimationConfig {
    fn search_seeded(&self, label: u64) -> SearchConfig {
        SearchConfig {
            seed: seeding::derive_seed(self.seed, &[2, label]),
            ..self.search.clone()
        }
    }
}

/// Estimated nuisances shared by the estimators.
#[derive(Debug, Clone)]
pub struct Nuisances {
    pub folds: FoldPlan,
    pub eta: CrossfitEta,
    /// Full parameter vector per fold from the in-sample plug-in fit on the
    /// fold's complement.
    pub preliminary: Vec<Vec<f64>>,
    pub orivs: OrivSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimates {
    pub debiased: Option<DgmmResult>,
    pub plug_in: Option<DgmmResult>,
}

/// Cross-fitted first stages on fresh folds.
pub fn fit_first_stage(panel: &PanelDataset, system: &MomentSystem, config: &EstimationConfig) -> Result<CrossfitEta> {
    system.check_panel(panel)?;
    let folds = make_folds(panel.n_firms(), config.n_folds, seeding::derive_seed(config.seed, &[0]))?;
    // trees past the prediction cap only feed the validation trace
    let spec = match &config.first_stage {
        RegressorSpec::GradientBoostedTrees(p) => RegressorSpec::GradientBoostedTrees(p.trimmed()),
        other => other.clone(),
    };
    crossfit_eta(
        panel,
        &folds,
        &spec,
        &system.eta_targets(),
        seeding::derive_seed(config.seed, &[1]),
    )
}

/// Plug-in estimate on the complement of every fold with that fold's
/// in-sample first-stage predictions.
pub fn fold_preliminary(
    panel: &PanelDataset,
    system: &MomentSystem,
    eta: &CrossfitEta,
    config: &EstimationConfig,
) -> Result<Vec<Vec<f64>>> {
    (0..eta.folds().n_folds())
        .map(|l| {
            let md = MomentData::fold_plug_in(system, panel, eta, l)?;
            point_estimate(system, &md, &config.search_seeded(10 + l as u64))
                .map_err(|e| e.context(format!("preliminary estimate without fold {l}")))
        })
        .collect()
}

pub fn fit_nuisances(panel: &PanelDataset, system: &MomentSystem, config: &EstimationConfig) -> Result<Nuisances> {
    let eta = fit_first_stage(panel, system, config)?;
    let preliminary = fold_preliminary(panel, system, &eta, config)?;
    let omega: Vec<f64> = preliminary.iter().map(|t| t[system.omega_index()]).collect();
    let orivs = estimate_orivs(panel, eta.folds(), system, &omega, &config.oriv)?;
    Ok(Nuisances {
        folds: eta.folds().clone(),
        eta,
        preliminary,
        orivs,
    })
}

/// Debiased GMM with the cross-fitted instruments; `Ψ̂` uses each firm's
/// fold-level preliminary estimate.
pub fn estimate_debiased(
    panel: &PanelDataset,
    system: &MomentSystem,
    nuisances: &Nuisances,
    config: &EstimationConfig,
) -> Result<DgmmResult> {
    let md = MomentData::cross_fitted(system, panel, &nuisances.eta, nuisances.orivs.held_out())?;
    let per_row: Vec<Vec<f64>> = (0..panel.n_firms())
        .map(|i| nuisances.preliminary[nuisances.folds.fold_of(i)].clone())
        .collect();
    minimize_gmm(system, &md, &config.search_seeded(1), config.weighting, PsiPoint::PerRow(&per_row), "dgmm")
}

/// Plug-in GMM with the conventional instruments. Standard errors come from
/// a firm-level bootstrap that refits the first stage on every resample;
/// the sandwich that ignores the first stage is kept in the diagnostics.
pub fn estimate_naive_pi(
    panel: &PanelDataset,
    system: &MomentSystem,
    eta: &CrossfitEta,
    config: &EstimationConfig,
) -> Result<DgmmResult> {
    let b = config.bootstrap.draws;
    if b < 50 {
        return Err(Error::Argument(format!("bootstrap needs at least 50 draws, got {b}")));
    }
    let instruments = system.plug_in_values(panel, &(0..panel.n_firms()).collect::<Vec<_>>())?;
    let md = MomentData::cross_fitted(system, panel, eta, instruments)?;
    let mut result = minimize_gmm(system, &md, &config.search_seeded(3), config.weighting, PsiPoint::Estimate, "pi")?;
    let free = result.free.clone();
    let n = panel.n_firms();
    let draws: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|d| {
            let mut rng = seeding::stream(config.seed, &[4, d as u64]);
            let firms: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sub = panel.select_firms(&firms);
            let sub_config = EstimationConfig {
                seed: seeding::derive_seed(config.seed, &[5, d as u64]),
                ..config.clone()
            };
            let fit = || -> Result<Vec<f64>> {
                let eta_b = fit_first_stage(&sub, system, &sub_config)?;
                let inst = system.plug_in_values(&sub, &(0..n).collect::<Vec<_>>())?;
                let md_b = MomentData::cross_fitted(system, &sub, &eta_b, inst)?;
                point_estimate(system, &md_b, &sub_config.search_seeded(3))
            };
            fit().ok().map(|theta| free.iter().map(|&k| theta[k]).collect())
        })
        .collect();
    let kept: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let skipped = b - kept.len();
    if skipped as f64 > config.bootstrap.max_skip_share * b as f64 {
        return Err(Error::Fit(format!("{skipped} of {b} bootstrap resamples failed")));
    }
    let p = free.len();
    let means: Vec<f64> = (0..p).map(|a| stats::mean(&kept.iter().map(|v| v[a]).collect::<Vec<_>>())).collect();
    let m = kept.len() as f64;
    let cov = nalgebra::DMatrix::from_fn(p, p, |a, c| {
        kept.iter().map(|v| (v[a] - means[a]) * (v[c] - means[c])).sum::<f64>() / (m - 1.0)
    });
    result.diagnostics.naive_se = Some(result.se.clone());
    result.diagnostics.bootstrap_draws = Some(b);
    result.diagnostics.bootstrap_skipped = Some(skipped);
    result.set_sigma(&(cov * n as f64));
    Ok(result)
}

/// Runs the requested estimators.
pub fn estimate(panel: &PanelDataset, system: &MomentSystem, config: &EstimationConfig) -> Result<Estimates> {
    if !config.debiased && !config.plug_in {
        return Err(Error::Argument("no estimator requested".into()));
    }
    let (eta, debiased) = if config.debiased {
        let nuisances = fit_nuisances(panel, system, config)?;
        let est = estimate_debiased(panel, system, &nuisances, config).map_err(|e| e.context("debiased GMM"))?;
        (nuisances.eta, Some(est))
    } else {
        (fit_first_stage(panel, system, config)?, None)
    };
    let plug_in = if config.plug_in {
        Some(estimate_naive_pi(panel, system, &eta, config).map_err(|e| e.context("plug-in GMM"))?)
    } else {
        None
    };
    Ok(Estimates { debiased, plug_in })
}
