//! First-stage nonparametric regressions and their cross-fitted predictions.

mod crossfit;
mod gbt;
mod ridge;

pub use crossfit::{crossfit_eta, CrossfitEta, EtaTarget};
pub use gbt::{fit_gbt, GbtModel, GbtParams, Tree};
pub use ridge::{fit_ridge_basis, fit_ridge_basis_weighted, RidgeModel, RidgeParams};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{per_variable_width, Dictionary};
use crate::error::{Error, Result};

/// Which learner to use, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorSpec {
    GradientBoostedTrees(GbtParams),
    RidgeBasis(RidgeParams),
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec::GradientBoostedTrees(GbtParams::default())
    }
}

impl RegressorSpec {
    /// Minimum number of training rows the learner accepts.
    pub fn min_rows(&self) -> usize {
        match self {
            RegressorSpec::GradientBoostedTrees(p) => {
                ((2 * p.min_node_size) as f64 / p.train_fraction).ceil() as usize
            }
            RegressorSpec::RidgeBasis(_) => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegressorSpec::GradientBoostedTrees(_) => "gradient_boosted_trees",
            RegressorSpec::RidgeBasis(_) => "ridge_basis",
        }
    }
}

/// A fitted first-stage regression.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedRegressor {
    Gbt(GbtModel),
    Ridge(RidgeModel),
}

impl FittedRegressor {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            FittedRegressor::Gbt(m) => m.predict(x),
            FittedRegressor::Ridge(m) => m.predict(x),
        }
    }
}

/// Fits the learner described by `spec` on `(x, y)`.
pub fn fit_regressor(spec: &RegressorSpec, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<FittedRegressor> {
    match spec {
        RegressorSpec::GradientBoostedTrees(p) => fit_gbt(x, y, p, seed).map(FittedRegressor::Gbt),
        RegressorSpec::RidgeBasis(p) => {
            if x.nrows() < 2 {
                return Err(Error::Fit(format!("ridge basis needs at least 2 rows, got {}", x.nrows())));
            }
            let k = p.per_variable.unwrap_or_else(|| per_variable_width(x.nrows(), x.ncols()));
            let dict = Dictionary::fit(x, k)?;
            fit_ridge_basis(x, y, &dict, p.ridge).map(FittedRegressor::Ridge)
        }
    }
}
