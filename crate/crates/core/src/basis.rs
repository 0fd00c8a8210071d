//! Exponential dictionaries and their standardization.
//!
//! A dictionary maps a block of conditioning variables to `r` candidate
//! regressors: a leading constant followed by tensor products of univariate
//! exponential bases `exp(a_k * v)`, each standardized to mean zero and unit
//! variance on the sample it was fitted on.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column-wise `exp(rate_k * v)`.
pub fn exponential_basis(values: &[f64], rates: &[f64]) -> Result<DMatrix<f64>> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite basis input at position {pos}")));
    }
    let out = DMatrix::from_fn(values.len(), rates.len(), |i, k| (rates[k] * values[i]).exp());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("exponential basis overflowed".into()));
    }
    Ok(out)
}

/// `k` equally spaced rates on `[-1, 1]` (a single rate is 0).
pub fn equally_spaced_rates(k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..k).map(|i| -1.0 + 2.0 * i as f64 / (k - 1) as f64).collect(),
    }
}

/// All pairwise column products; column `i * width(b) + j` is `a[:, i] ⊙ b[:, j]`.
pub fn tensor_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "tensor product of {} and {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let wb = b.ncols();
    Ok(DMatrix::from_fn(a.nrows(), a.ncols() * wb, |r, c| {
        a[(r, c / wb)] * b[(r, c % wb)]
    }))
}

/// Per-variable basis size: `max(2, floor(sqrt(n) / 5))` for one or two
/// variables, 5 for three or more.
pub fn per_variable_width(n_train: usize, n_vars: usize) -> usize {
    if n_vars >= 3 {
        5
    } else {
        ((n_train as f64).sqrt() / 5.0).floor().max(2.0) as usize
    }
}

/// Column means and standard deviations of a raw dictionary. Column 0 is
/// the constant and passes through untouched; columns without variance are
/// dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    kept: Vec<usize>,
    means: Vec<f64>,
    sds: Vec<f64>,
    dropped: usize,
}

impl Standardizer {
    /// Number of output columns, including the constant.
    pub fn width(&self) -> usize {
        self.kept.len()
    }

    /// How many raw columns were discarded for zero variance.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    /// Standardizes `raw` with the stored statistics (no refit).
    pub fn apply(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let needed = self.kept.iter().copied().max().unwrap_or(0) + 1;
        if raw.ncols() < needed {
            return Err(Error::Shape(format!(
                "dictionary has {} columns, standardizer needs {needed}",
                raw.ncols()
            )));
        }
        Ok(DMatrix::from_fn(raw.nrows(), self.kept.len(), |i, c| {
            let src = self.kept[c];
            if c == 0 {
                raw[(i, src)]
            } else {
                (raw[(i, src)] - self.means[c]) / self.sds[c]
            }
        }))
    }
}

/// Fits column statistics on `raw` (≥ 2 rows). Non-first columns whose
/// standard deviation is numerically zero are dropped.
pub fn fit_standardizer(raw: &DMatrix<f64>) -> Result<Standardizer> {
    let n = raw.nrows();
    if n < 2 {
        return Err(Error::Argument(format!("standardizer needs at least 2 rows, got {n}")));
    }
    if raw.ncols() == 0 {
        return Err(Error::Shape("empty dictionary".into()));
    }
    let mut kept = vec![0];
    let mut means = vec![0.0];
    let mut sds = vec![1.0];
    let mut dropped = 0;
    for c in 1..raw.ncols() {
        let col = raw.column(c);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !sd.is_finite() || sd <= 1e-10 * (1.0 + mean.abs()) {
            dropped += 1;
            continue;
        }
        kept.push(c);
        means.push(mean);
        sds.push(sd);
    }
    if dropped > 0 {
        log::debug!("standardizer dropped {dropped} zero-variance columns");
    }
    Ok(Standardizer {
        kept,
        means,
        sds,
        dropped,
    })
}

/// A fitted dictionary `γ(Z)` for a block of conditioning variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    rates: Vec<f64>,
    input_centers: Vec<f64>,
    input_scales: Vec<f64>,
    standardizer: Standardizer,
}

impl Dictionary {
    /// Fits input scaling and column standardization on `inputs`
    /// (rows = observations, columns = variables) with `per_variable`
    /// exponential terms per variable.
    pub fn fit(inputs: &DMatrix<f64>, per_variable: usize) -> Result<Self> {
        Self::fit_with_rates(inputs, equally_spaced_rates(per_variable))
    }

    pub fn fit_with_rates(inputs: &DMatrix<f64>, rates: Vec<f64>) -> Result<Self> {
        let n = inputs.nrows();
        if n < 2 {
            return Err(Error::Argument(format!("dictionary needs at least 2 rows, got {n}")));
        }
        if inputs.ncols() == 0 || rates.is_empty() {
            return Err(Error::Shape("dictionary needs at least one variable and rate".into()));
        }
        let mut input_centers = Vec::with_capacity(inputs.ncols());
        let mut input_scales = Vec::with_capacity(inputs.ncols());
        for c in 0..inputs.ncols() {
            let col = inputs.column(c);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite dictionary input in variable {c}")));
            }
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            input_centers.push(mean);
            input_scales.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        let mut dict = Self {
            rates,
            input_centers,
            input_scales,
            standardizer: Standardizer {
                kept: vec![0],
                means: vec![0.0],
                sds: vec![1.0],
                dropped: 0,
            },
        };
        let raw = dict.raw(inputs)?;
        dict.standardizer = fit_standardizer(&raw)?;
        Ok(dict)
    }

    /// Number of columns `r`, including the constant.
    pub fn width(&self) -> usize {
        self.standardizer.width()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Unstandardized columns: constant, then the tensor product of the
    /// per-variable exponential bases of the scaled inputs.
    fn raw(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.input_centers.len() {
            return Err(Error::Shape(format!(
                "dictionary fitted on {} variables, got {}",
                self.input_centers.len(),
                inputs.ncols()
            )));
        }
        let mut product = DMatrix::from_element(inputs.nrows(), 1, 1.0);
        for c in 0..inputs.ncols() {
            let scaled: Vec<f64> = inputs
                .column(c)
                .iter()
                .map(|v| (v - self.input_centers[c]) / self.input_scales[c])
                .collect();
            let basis = exponential_basis(&scaled, &self.rates)?;
            product = tensor_product(&product, &basis)?;
        }
        let mut raw = DMatrix::from_element(inputs.nrows(), product.ncols() + 1, 1.0);
        raw.columns_mut(1, product.ncols()).copy_from(&product);
        Ok(raw)
    }

    /// Standardized dictionary values for new rows, using training statistics.
    pub fn evaluate(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.standardizer.apply(&self.raw(inputs)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_input_gives_ones() {
        let m = exponential_basis(&[0.0, 0.0], &[-1.0, 0.3, 2.0]).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_rate_is_constant() {
        let m = exponential_basis(&[-3.0, 0.5, 9.0], &[0.0]).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ln2_rate_doubles() {
        let m = exponential_basis(&[1.0], &[std::f64::consts::LN_2]).unwrap();
        assert!((m[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(matches!(exponential_basis(&[f64::NAN], &[1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn tensor_of_ones_and_scalars() {
        let ones = DMatrix::from_element(4, 1, 1.0);
        let t = tensor_product(&ones, &ones).unwrap();
        assert_eq!(t.shape(), (4, 1));
        assert!(t.iter().all(|&v| v == 1.0));
        let t = tensor_product(&DMatrix::from_element(1, 1, 2.0), &DMatrix::from_element(1, 1, 3.0)).unwrap();
        assert_eq!(t[(0, 0)], 6.0);
    }

    #[test]
    fn tensor_row_mismatch() {
        let a = DMatrix::<f64>::zeros(3, 2);
        let b = DMatrix::<f64>::zeros(4, 2);
        assert!(matches!(tensor_product(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn width_rule_matches_n_over_25() {
        // two variables with floor(sqrt(n)/5) terms each gives about n/25 columns
        let k = per_variable_width(1000, 2);
        assert_eq!(k, 6);
        let r = k * k;
        assert!((r as f64 - 1000.0 / 25.0).abs() <= 0.1 * 40.0, "r = {r}");
        assert_eq!(per_variable_width(10, 2), 2);
        assert_eq!(per_variable_width(1000, 3).pow(3), 125);
    }

    fn sample_inputs(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 2, |i, c| ((i * 7 + c * 3) % 11) as f64 / 3.0 + (i as f64).sin())
    }

    #[test]
    fn standardized_columns_have_unit_moments() {
        let dict = Dictionary::fit(&sample_inputs(200), 5).unwrap();
        let g = dict.evaluate(&sample_inputs(200)).unwrap();
        assert_eq!(g.ncols(), 25);
        assert!(g.column(0).iter().all(|&v| v == 1.0));
        for c in 1..g.ncols() {
            let col = g.column(c);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-10, "column {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-10, "column {c} var {var}");
        }
    }

    #[test]
    fn standardizer_is_idempotent_on_standardized_input() {
        let dict = Dictionary::fit(&sample_inputs(150), 3).unwrap();
        let g = dict.evaluate(&sample_inputs(150)).unwrap();
        let again = fit_standardizer(&g).unwrap();
        assert_eq!(again.dropped(), 0);
        for c in 1..again.width() {
            assert!(again.means()[c].abs() < 1e-10);
            assert!((again.sds()[c] - 1.0).abs() < 1e-10);
        }
        let h = again.apply(&g).unwrap();
        assert!((h - g).amax() < 1e-10);
    }

    #[test]
    fn zero_variance_column_is_dropped() {
        let raw = DMatrix::from_fn(10, 4, |i, c| match c {
            0 => 1.0,
            2 => 3.5,
            _ => (i * (c + 1)) as f64,
        });
        let s = fit_standardizer(&raw).unwrap();
        assert_eq!(s.width(), 3);
        assert_eq!(s.dropped(), 1);
    }

    #[test]
    fn held_out_uses_training_statistics() {
        let train = sample_inputs(100);
        let dict = Dictionary::fit(&train, 3).unwrap();
        let test = train.map(|v| v + 0.25);
        let g_test = dict.evaluate(&test).unwrap();
        // recomputing on the shifted sample would re-center; the stored fit must not
        let refit = Dictionary::fit(&test, 3).unwrap().evaluate(&test).unwrap();
        assert!((g_test.clone() - refit).amax() > 1e-3);
        assert_eq!(dict.evaluate(&test).unwrap(), g_test);
    }

    proptest! {
        #[test]
        fn tensor_entries_are_products(
            rows in 1usize..6, wa in 1usize..4, wb in 1usize..4,
            seed in proptest::collection::vec(-3.0f64..3.0, 64)
        ) {
            let a = DMatrix::from_fn(rows, wa, |i, j| seed[(i * 5 + j) % 64]);
            let b = DMatrix::from_fn(rows, wb, |i, j| seed[(i * 3 + j * 7 + 11) % 64]);
            let t = tensor_product(&a, &b).unwrap();
            prop_assert_eq!(t.ncols(), wa * wb);
            for i in 0..wa {
                for j in 0..wb {
                    for row in 0..rows {
                        prop_assert_eq!(t[(row, i * wb + j)], a[(row, i)] * b[(row, j)]);
                    }
                }
            }
        }
    }
}
