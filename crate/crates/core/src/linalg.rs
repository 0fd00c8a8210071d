//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a x = b` for symmetric positive (semi)definite `a`: Cholesky
/// first, LU as a fallback.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::Shape(format!(
            "system {}x{} with right-hand side of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numeric("singular linear system".into()))
}

/// Inverse of a symmetric positive definite matrix (LU fallback).
pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let inv = chol.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            return Ok(inv);
        }
    }
    a.clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numeric("matrix is not invertible".into()))
}

/// Reciprocal condition number estimate from the symmetric eigenvalues.
pub fn rcond_symmetric(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Ordinary least squares via the normal equations with a tiny ridge
/// jitter proportional to the Gram trace, for near-collinear designs.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = x.transpose() * x;
    let rhs = x.transpose() * y;
    let jitter = 1e-10 * gram.trace() / gram.nrows().max(1) as f64;
    let mut a = gram;
    for i in 0..a.nrows() {
        a[(i, i)] += jitter;
    }
    solve_spd(&a, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve_spd(&a, &b).unwrap();
        assert!((&a * x - b).amax() < 1e-12);
    }

    #[test]
    fn singular_system_errors() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(solve_spd(&a, &b).is_err());
    }

    #[test]
    fn ols_recovers_exact_fit() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(6, |i, _| 2.0 + 0.5 * i as f64);
        let b = least_squares(&x, &y).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-8 && (b[1] - 0.5).abs() < 1e-8);
    }
}
