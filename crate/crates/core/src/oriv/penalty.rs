//! Penalty level and data-driven penalty loadings.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::normal_quantile;

/// Smallest loading allowed.
pub const LOADING_FLOOR: f64 = 1e-12;

/// `c1 / n_train^{1/4} · Φ⁻¹(1 − c2 / (2r))`.
pub fn lambda_rule(n_train: usize, r: usize, c1: f64, c2: f64) -> Result<f64> {
    if n_train < 2 || r == 0 {
        return Err(Error::Argument(format!("penalty needs n_train ≥ 2 and r ≥ 1, got {n_train}, {r}")));
    }
    let tail = c2 / (2.0 * r as f64);
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::Argument(format!("c2/(2r) = {tail} must lie in (0, 1)")));
    }
    Ok(c1 / (n_train as f64).powf(0.25) * normal_quantile(1.0 - tail))
}

/// Default `c2 = 0.5 / ln(max(n, r))`.
pub fn default_c2(n: usize, r: usize) -> f64 {
    0.5 / (n.max(r) as f64).ln()
}

/// Root-mean-square over rows of `Σ_j M_j[i, l] · ε_j[i]` with
/// `ε_j = f_j − M_j β`, floored at [`LOADING_FLOOR`].
pub fn update_loadings(m: &[DMatrix<f64>], f: &[DVector<f64>], beta: &DVector<f64>) -> DVector<f64> {
    let n = m[0].nrows();
    let r = m[0].ncols();
    let mut score = DMatrix::<f64>::zeros(n, r);
    for (mj, fj) in m.iter().zip(f) {
        let resid = fj - mj * beta;
        for l in 0..r {
            for i in 0..n {
                score[(i, l)] += mj[(i, l)] * resid[i];
            }
        }
    }
    DVector::from_fn(r, |l, _| {
        let ms = score.column(l).iter().map(|v| v * v).sum::<f64>() / n as f64;
        ms.sqrt().max(LOADING_FLOOR)
    })
}
