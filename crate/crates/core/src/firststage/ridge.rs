//! Penalized least squares on a standardized exponential dictionary.
//!
//! The constant column is left unpenalized so that full shrinkage reduces
//! the fit to the (weighted) sample mean. Inputs are clamped to the training
//! range before evaluation: exponential terms explode outside it, and one
//! extrapolated firm can otherwise dominate every downstream average.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::Dictionary;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeParams {
    /// Penalty on the non-constant coefficients (per observation).
    pub ridge: f64,
    /// Exponential terms per input variable; `None` uses the sample-size rule.
    pub per_variable: Option<usize>,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self {
            ridge: 1e-3,
            per_variable: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    dictionary: Dictionary,
    coefficients: DVector<f64>,
    ridge: f64,
    /// Training `(min, max)` per input column.
    bounds: Vec<(f64, f64)>,
}

impl RidgeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.bounds.len() {
            return Err(Error::Shape(format!(
                "model has {} inputs, got {} columns",
                self.bounds.len(),
                x.ncols()
            )));
        }
        let clamped = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let (lo, hi) = self.bounds[j];
            x[(i, j)].clamp(lo, hi)
        });
        let g = self.dictionary.evaluate(&clamped)?;
        Ok((g * &self.coefficients).iter().copied().collect())
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }
}

/// Minimizes `Σ w_i (y_i − g(x_i)'b)² / Σ w_i + ridge · ‖b_{-0}‖²`.
pub fn fit_ridge_basis_weighted(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    dictionary: &Dictionary,
    ridge: f64,
) -> Result<RidgeModel> {
    if !(ridge > 0.0) {
        return Err(Error::Argument(format!("ridge penalty must be positive, got {ridge}")));
    }
    if x.nrows() != y.len() || weights.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} feature rows, {} responses, {} weights",
            x.nrows(),
            y.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Argument("weights must be non-negative with positive sum".into()));
    }
    let (gram, rhs) = normal_equations(&dictionary.evaluate(x)?, y, weights, ridge);
    let coefficients = linalg::solve_spd(&gram, &rhs)?;
    let bounds = x
        .column_iter()
        .map(|c| (c.min(), c.max()))
        .collect();
    Ok(RidgeModel {
        dictionary: dictionary.clone(),
        coefficients,
        ridge,
        bounds,
    })
}

/// Left- and right-hand sides of the ridge normal equations.
pub fn normal_equations(
    g: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    ridge: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let total: f64 = weights.iter().sum();
    let r = g.ncols();
    let mut gw = g.clone();
    for (i, &w) in weights.iter().enumerate() {
        gw.row_mut(i).scale_mut(w / total);
    }
    let mut gram = gw.transpose() * g;
    for l in 1..r {
        gram[(l, l)] += ridge;
    }
    let rhs = gw.transpose() * DVector::from_column_slice(y);
    (gram, rhs)
}

pub fn fit_ridge_basis(x: &DMatrix<f64>, y: &[f64], dictionary: &Dictionary, ridge: f64) -> Result<RidgeModel> {
    fit_ridge_basis_weighted(x, y, &vec![1.0; y.len()], dictionary, ridge)
}
