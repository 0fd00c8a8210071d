//! Cross-fitted orthogonal instruments: per fold, fit dictionaries and the
//! generated design on the training firms, solve the penalized program with
//! iterated loadings, and evaluate residual instruments on every firm.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{build_design_production, fit_stage_dictionaries, production_regressors};
use super::lasso::{coordinate_descent, init_beta_lowdim, CdOptions, LassoProblem};
use super::penalty::{default_c2, lambda_rule, update_loadings};
use crate::basis::per_variable_width;
use crate::data::{FoldPlan, PanelDataset};
use crate::error::{Error, Result};
use crate::moments::MomentSystem;

/// Which dictionary columns seed the low-dimensional start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowDim {
    /// The first `k` columns.
    First(usize),
    /// The first `r / k` columns (at least one).
    Fraction(usize),
}

impl LowDim {
    pub fn columns(&self, r: usize) -> Vec<usize> {
        let k = match *self {
            LowDim::First(k) => k,
            LowDim::Fraction(d) => (r / d.max(1)).max(1),
        };
        (0..k.min(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrivConfig {
    pub c1: f64,
    /// `None` uses `0.5 / ln(max(n, r))`.
    pub c2: Option<f64>,
    /// Loading-update iterations.
    pub max_iterations: usize,
    /// Relative change in β that ends the loading iterations.
    pub tolerance: f64,
    pub cd_tolerance: f64,
    pub max_sweeps: usize,
    pub low_dim: LowDim,
    /// Exponential terms per conditioning variable; `None` uses the
    /// sample-size rule.
    pub per_variable: Option<usize>,
}

impl Default for OrivConfig {
    fn default() -> Self {
        Self {
            c1: 1.1,
            c2: None,
            max_iterations: 10,
            tolerance: 1e-4,
            cd_tolerance: 1e-7,
            max_sweeps: 1000,
            low_dim: LowDim::First(5),
            per_variable: None,
        }
    }
}

/// Result of the iterated program for one target set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrivFit {
    pub beta: Vec<f64>,
    pub active: Vec<usize>,
    pub loadings: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub sweeps: usize,
    pub objective: f64,
    pub kkt_violation: f64,
}

/// Steps from initialization to the final coefficients for one target set.
pub fn solve_oriv(
    m: &[DMatrix<f64>],
    f: &[DVector<f64>],
    lambda: f64,
    low: &[usize],
    config: &OrivConfig,
) -> Result<OrivFit> {
    let problem = LassoProblem::from_design(m, f)?;
    let options = CdOptions {
        tol: config.cd_tolerance,
        max_sweeps: config.max_sweeps,
        polish: true,
    };
    let mut beta = init_beta_lowdim(&problem, low)?;
    let mut loadings = update_loadings(m, f, &beta);
    let mut iterations = 0;
    let mut sweeps = 0;
    let mut objective = problem.objective(&beta, &loadings, lambda);
    for _ in 0..config.max_iterations.max(1) {
        iterations += 1;
        if iterations > 1 {
            loadings = update_loadings(m, f, &beta);
        }
        let sol = coordinate_descent(&problem, &beta, &loadings, lambda, &options)?;
        sweeps += sol.sweeps;
        objective = sol.objective;
        let change = (&sol.beta - &beta).norm();
        let scale = beta.norm().max(sol.beta.norm());
        beta = sol.beta;
        if change <= config.tolerance * scale || scale == 0.0 {
            break;
        }
    }
    Ok(OrivFit {
        active: (0..beta.len()).filter(|&l| beta[l] != 0.0).collect(),
        kkt_violation: problem.kkt_violation(&beta, &loadings, lambda),
        beta: beta.iter().copied().collect(),
        loadings: loadings.iter().copied().collect(),
        lambda,
        iterations,
        sweeps,
        objective,
    })
}

/// Everything estimated for one fold.
#[derive(Debug, Clone, Serialize)]
pub struct FoldOriv {
    pub fold: usize,
    pub theta_omega: f64,
    pub lambda: f64,
    pub width: usize,
    /// One fit per starting-instrument vector.
    pub fits: Vec<OrivFit>,
}

/// Residual instruments for every fold, menu vector, restriction and firm.
#[derive(Debug, Clone)]
pub struct OrivSet {
    folds: FoldPlan,
    /// `kappa[l][q]`: firms × restrictions.
    kappa: Vec<Vec<DMatrix<f64>>>,
    fold_fits: Vec<FoldOriv>,
}

impl OrivSet {
    /// Assembles a set from explicit values (`kappa[l][q]` is firms × J).
    pub fn from_values(folds: FoldPlan, kappa: Vec<Vec<DMatrix<f64>>>) -> Result<Self> {
        if kappa.len() != folds.n_folds() {
            return Err(Error::Shape(format!("{} folds of instruments for {} folds", kappa.len(), folds.n_folds())));
        }
        let q = kappa[0].len();
        if kappa.iter().any(|k| k.len() != q || k.iter().any(|m| m.nrows() != folds.n_firms())) {
            return Err(Error::Shape("instrument values must be [fold][menu] of firms × restrictions".into()));
        }
        Ok(Self {
            folds,
            kappa,
            fold_fits: Vec::new(),
        })
    }

    pub fn folds(&self) -> &FoldPlan {
        &self.folds
    }

    pub fn menu_size(&self) -> usize {
        self.kappa[0].len()
    }

    /// Values of the fold-`l` instruments for menu vector `q` on all firms.
    pub fn fold_values(&self, l: usize, q: usize) -> &DMatrix<f64> {
        &self.kappa[l][q]
    }

    /// Per firm, the instruments from the fold that held the firm out:
    /// `[q]` of firms × restrictions.
    pub fn held_out(&self) -> Vec<DMatrix<f64>> {
        let n = self.folds.n_firms();
        (0..self.menu_size())
            .map(|q| {
                let j = self.kappa[0][q].ncols();
                DMatrix::from_fn(n, j, |i, c| self.kappa[self.folds.fold_of(i)][q][(i, c)])
            })
            .collect()
    }

    pub fn fold_fits(&self) -> &[FoldOriv] {
        &self.fold_fits
    }
}

/// Runs the full construction on every fold. `theta_omega[l]` is the
/// preliminary persistence estimate computed without fold `l`.
pub fn estimate_orivs(
    panel: &PanelDataset,
    folds: &FoldPlan,
    system: &MomentSystem,
    theta_omega: &[f64],
    config: &OrivConfig,
) -> Result<OrivSet> {
    if theta_omega.len() != folds.n_folds() {
        return Err(Error::Argument(format!(
            "{} preliminary estimates for {} folds",
            theta_omega.len(),
            folds.n_folds()
        )));
    }
    if system.menu_size() == 0 {
        return Err(Error::Argument("instrument menu is empty".into()));
    }
    system.check_panel(panel)?;
    let n = panel.n_firms();
    let all: Vec<usize> = (0..n).collect();
    let results: Vec<Result<(Vec<DMatrix<f64>>, FoldOriv)>> = (0..folds.n_folds())
        .into_par_iter()
        .map(|l| {
            let rows = folds.complement(l);
            let n_vars = system.conditioning(0).len();
            let per_variable = config.per_variable.unwrap_or_else(|| per_variable_width(rows.len(), n_vars));
            let dicts = fit_stage_dictionaries(system, panel, &rows, per_variable)?;
            let design = build_design_production(system, panel, l, &rows, &dicts, theta_omega[l])?;
            let r = design.width();
            let c2 = config.c2.unwrap_or_else(|| default_c2(n, r));
            let lambda = lambda_rule(rows.len(), r, config.c1, c2)?;
            let low = config.low_dim.columns(r);
            let fits = design
                .f
                .par_iter()
                .enumerate()
                .map(|(q, f)| {
                    solve_oriv(&design.m, f, lambda, &low, config)
                        .map_err(|e| e.context(format!("instrument vector {q}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let m_all = production_regressors(system, panel, &all, &dicts, theta_omega[l])?;
            let kappa = fits
                .iter()
                .enumerate()
                .map(|(q, fit)| {
                    let f_all = system.menu_values(panel, q, &all)?;
                    let beta = DVector::from_column_slice(&fit.beta);
                    let mut k = f_all;
                    for (j, mj) in m_all.iter().enumerate() {
                        let fitted = mj * &beta;
                        for i in 0..n {
                            k[(i, j)] -= fitted[i];
                        }
                    }
                    Ok(k)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((
                kappa,
                FoldOriv {
                    fold: l,
                    theta_omega: theta_omega[l],
                    lambda,
                    width: r,
                    fits,
                },
            ))
        })
        .collect();
    let mut kappa = Vec::with_capacity(folds.n_folds());
    let mut fold_fits = Vec::with_capacity(folds.n_folds());
    for (l, res) in results.into_iter().enumerate() {
        let (k, fit) = res.map_err(|e| e.context(format!("orthogonal instruments for fold {l}")))?;
        kappa.push(k);
        fold_fits.push(fit);
    }
    Ok(OrivSet {
        folds: folds.clone(),
        kappa,
        fold_fits,
    })
}
