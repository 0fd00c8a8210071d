//! Generated regressors for the orthogonal-instrument program.

use nalgebra::{DMatrix, DVector};

use crate::basis::Dictionary;
use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::firststage::{fit_regressor, RegressorSpec};
use crate::moments::MomentSystem;

/// Design matrices for one fold: one `rows × r` matrix per restriction and
/// the starting-instrument targets of every menu vector.
#[derive(Debug, Clone)]
pub struct GeneratedDesign {
    pub fold: usize,
    /// Firms the rows belong to (the fold's training firms).
    pub rows: Vec<usize>,
    pub m: Vec<DMatrix<f64>>,
    /// `f[q][j]`, aligned with `rows`.
    pub f: Vec<Vec<DVector<f64>>>,
    pub theta_omega: f64,
}

impl GeneratedDesign {
    pub fn width(&self) -> usize {
        self.m.first().map_or(0, |m| m.ncols())
    }
}

/// Fits one dictionary per stage on `Z_s` of the given firms.
pub fn fit_stage_dictionaries(
    system: &MomentSystem,
    panel: &PanelDataset,
    firms: &[usize],
    per_variable: usize,
) -> Result<Vec<Dictionary>> {
    (0..system.n_stages())
        .map(|s| Dictionary::fit(&panel.columns(&system.conditioning(s), firms)?, per_variable))
        .collect()
}

/// Effective regressors of the production model with one coefficient vector
/// shared by all restrictions: restriction `j` at stage `s` gets
/// `design_factor(j, θ̂_ω) · γ_s(Z_s)`, i.e. `(1+θ̂_ω)γ_s` for first-stage rows
/// and `θ̂_ω(1+θ̂_ω)γ_s` for structural rows. No first-stage estimates enter.
pub fn production_regressors(
    system: &MomentSystem,
    panel: &PanelDataset,
    firms: &[usize],
    dictionaries: &[Dictionary],
    theta_omega: f64,
) -> Result<Vec<DMatrix<f64>>> {
    if !theta_omega.is_finite() {
        return Err(Error::Construction(format!("preliminary persistence {theta_omega} is not finite")));
    }
    if dictionaries.len() != system.n_stages() {
        return Err(Error::Construction(format!(
            "{} dictionaries for {} stages",
            dictionaries.len(),
            system.n_stages()
        )));
    }
    let width = dictionaries[0].width();
    if dictionaries.iter().any(|d| d.width() != width) {
        return Err(Error::Construction("stage dictionaries differ in width".into()));
    }
    let gammas = (0..system.n_stages())
        .map(|s| dictionaries[s].evaluate(&panel.columns(&system.conditioning(s), firms)?))
        .collect::<Result<Vec<_>>>()?;
    let out: Vec<DMatrix<f64>> = system
        .cmrs()
        .iter()
        .map(|c| &gammas[c.stage] * system.design_factor(c.index, theta_omega))
        .collect();
    if out.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::Construction("design has non-finite entries".into()));
    }
    Ok(out)
}

/// Production-model design on the firms `rows` (the fold complement).
pub fn build_design_production(
    system: &MomentSystem,
    panel: &PanelDataset,
    fold: usize,
    rows: &[usize],
    dictionaries: &[Dictionary],
    theta_omega: f64,
) -> Result<GeneratedDesign> {
    let m = production_regressors(system, panel, rows, dictionaries, theta_omega)?;
    let f = (0..system.menu_size())
        .map(|q| {
            let vals = system.menu_values(panel, q, rows)?;
            Ok((0..system.n_cmrs()).map(|j| vals.column(j).into_owned()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedDesign {
        fold,
        rows: rows.to_vec(),
        m,
        f,
        theta_omega,
    })
}

/// A conditional-mean estimator: fit on a subset of rows, predict all rows.
pub trait ConditionalMean: Sync {
    fn fit_predict(&self, train: &[usize], y: &[f64]) -> Result<Vec<f64>>;
}

/// Least-squares projection onto fixed features (a small ridge keeps it
/// well posed); exact when the target lies in the feature span.
pub struct LinearProjection {
    pub features: DMatrix<f64>,
    pub ridge: f64,
}

impl ConditionalMean for LinearProjection {
    fn fit_predict(&self, train: &[usize], y: &[f64]) -> Result<Vec<f64>> {
        let x = self.features.select_rows(train);
        let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let mut gram = x.tr_mul(&x) / train.len() as f64;
        for l in 0..gram.nrows() {
            gram[(l, l)] += self.ridge;
        }
        let coef = crate::linalg::solve_spd(&gram, &(x.tr_mul(&yt) / train.len() as f64))?;
        Ok((&self.features * coef).iter().copied().collect())
    }
}

/// Any first-stage learner on fixed inputs.
pub struct LearnedMean {
    pub inputs: DMatrix<f64>,
    pub spec: RegressorSpec,
    pub seed: u64,
}

impl ConditionalMean for LearnedMean {
    fn fit_predict(&self, train: &[usize], y: &[f64]) -> Result<Vec<f64>> {
        let x = self.inputs.select_rows(train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        fit_regressor(&self.spec, &x, &yt, self.seed)?.predict(&self.inputs)
    }
}

/// Ingredients of the general design builder. All per-row quantities cover
/// the same rows (typically the fold complement); `split` holds the three
/// disjoint row subsets used for the preliminary estimates (A), the
/// expectation given `V` (B), and the expectation given `Z_j` (C).
pub struct GeneralDesignInputs<'a> {
    /// `nu_a[j]`: rows × d_η matrix of `ν̃_j` evaluated with the A-sample
    /// estimates.
    pub nu_a: &'a [DMatrix<f64>],
    /// Same with the B-sample estimates.
    pub nu_b: &'a [DMatrix<f64>],
    /// `gamma[j]`: rows × r dictionary values `γ_j(Z_j)`.
    pub gamma: &'a [DMatrix<f64>],
    /// Estimator of `E[· | V]`.
    pub given_v: &'a dyn ConditionalMean,
    /// `given_z[j]`: estimator of `E[· | Z_j]`.
    pub given_z: &'a [&'a dyn ConditionalMean],
    pub split: [&'a [usize]; 3],
}

/// Entry `(i, k)` of restriction `j`:
/// `Ê_C[ Σ_{j'} Ê_B[ν̃_{j'}^A γ_{j'k} | V]' ν̃_j^B | Z_j ]`,
/// summing over `j'` because one coefficient vector is shared.
pub fn build_design_general(inputs: &GeneralDesignInputs) -> Result<Vec<DMatrix<f64>>> {
    let j_count = inputs.nu_a.len();
    if inputs.nu_b.len() != j_count || inputs.gamma.len() != j_count || inputs.given_z.len() != j_count {
        return Err(Error::Construction("general design inputs disagree in restriction count".into()));
    }
    if inputs.split.iter().any(|s| s.is_empty()) {
        return Err(Error::Construction("every part of the three-way split must be nonempty".into()));
    }
    let n = inputs.gamma[0].nrows();
    let r = inputs.gamma[0].ncols();
    let d = inputs.nu_a[0].ncols();
    let [_, b_rows, c_rows] = inputs.split;
    // inner[k]: rows × d matrix of Σ_{j'} Ê_B[ν̃_{j'} γ_{j'k} | V]
    let mut inner = vec![DMatrix::<f64>::zeros(n, d); r];
    for (k, block) in inner.iter_mut().enumerate() {
        for e in 0..d {
            let target: Vec<f64> = (0..n)
                .map(|i| (0..j_count).map(|jp| inputs.nu_a[jp][(i, e)] * inputs.gamma[jp][(i, k)]).sum())
                .collect();
            let fitted = if target.iter().all(|v| *v == 0.0) {
                vec![0.0; n]
            } else {
                inputs.given_v.fit_predict(b_rows, &target)?
            };
            for i in 0..n {
                block[(i, e)] = fitted[i];
            }
        }
    }
    let mut out = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let mut mj = DMatrix::zeros(n, r);
        for (k, block) in inner.iter().enumerate() {
            let target: Vec<f64> = (0..n)
                .map(|i| (0..d).map(|e| block[(i, e)] * inputs.nu_b[j][(i, e)]).sum())
                .collect();
            if target.iter().all(|v| *v == 0.0) {
                continue;
            }
            let fitted = inputs.given_z[j].fit_predict(c_rows, &target)?;
            for i in 0..n {
                mj[(i, k)] = fitted[i];
            }
        }
        out.push(mj);
    }
    Ok(out)
}
