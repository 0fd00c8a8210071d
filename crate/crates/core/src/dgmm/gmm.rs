//! GMM estimation on a moment bundle and sandwich inference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optimize::{grid_golden, nelder_mead_restarts, Minimum, NelderMeadOptions};
use super::profile::{profile_parameters_with, profiling_scores, InterceptRule};
use super::psi::{psi_bar, psi_matrix_with, psi_second_moment, MomentData};
use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::MomentSystem;
use crate::stats::Z_975;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `Λ = I`.
    #[default]
    Identity,
    /// `Λ = Ψ̂⁻¹` with `Ψ̂` at the preliminary estimate.
    Optimal,
}

/// Search controls shared by every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Bracket for each input coefficient.
    pub bracket: (f64, f64),
    pub grid_points: usize,
    pub tolerance: f64,
    /// Extra Nelder–Mead runs from perturbed starts.
    pub restarts: usize,
    pub restart_spread: f64,
    pub simplex_step: f64,
    pub max_iterations: usize,
    /// Start for multi-dimensional searches; bracket midpoints when absent.
    pub start: Option<Vec<f64>>,
    /// Search over every parameter instead of profiling out `(θ_1, θ_ω)`.
    pub joint: bool,
    pub intercept: InterceptRule,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            bracket: (0.0, 2.0),
            grid_points: 101,
            tolerance: 1e-8,
            restarts: 3,
            restart_spread: 0.5,
            simplex_step: 0.1,
            max_iterations: 5000,
            start: None,
            joint: false,
            intercept: InterceptRule::BackSolved,
            seed: 0,
        }
    }
}

/// The moment map as a function of the searched parameters.
pub struct GmmProblem<'a> {
    pub system: &'a MomentSystem,
    pub data: &'a MomentData,
    pub joint: bool,
    pub intercept: InterceptRule,
}

impl<'a> GmmProblem<'a> {
    pub fn new(system: &'a MomentSystem, data: &'a MomentData, joint: bool) -> Self {
        Self {
            system,
            data,
            joint,
            intercept: InterceptRule::BackSolved,
        }
    }

    pub fn with_intercept(mut self, rule: InterceptRule) -> Self {
        self.intercept = rule;
        self
    }

    /// Indices (in the full parameter vector) of the searched parameters.
    pub fn free(&self) -> Vec<usize> {
        if self.joint {
            (0..self.system.n_params()).collect()
        } else {
            (1..=self.system.inputs().len()).collect()
        }
    }

    /// Full parameter vector from the searched ones.
    pub fn expand(&self, free: &[f64]) -> Result<Vec<f64>> {
        if self.joint {
            return Ok(free.to_vec());
        }
        let (t1, omega) = profile_parameters_with(self.system, self.data, free, self.intercept)?;
        let mut theta = Vec::with_capacity(self.system.n_params());
        theta.push(t1);
        theta.extend_from_slice(free);
        theta.push(omega);
        Ok(theta)
    }

    pub fn psi_bar(&self, free: &[f64]) -> Result<DVector<f64>> {
        let v = psi_bar(self.system, self.data, &self.expand(free)?);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("moments are not finite at {free:?}")));
        }
        Ok(v)
    }

    pub fn objective(&self, free: &[f64], weight: &DMatrix<f64>) -> Result<f64> {
        Ok(gmm_objective(&self.psi_bar(free)?, weight))
    }
}

/// `ψ̄' Λ ψ̄`.
pub fn gmm_objective(psi_bar: &DVector<f64>, weight: &DMatrix<f64>) -> f64 {
    psi_bar.dot(&(weight * psi_bar))
}

/// Central differences with step `1e-5 (1 + |θ_k|)` per coordinate.
pub fn jacobian_fd(f: impl Fn(&[f64]) -> Result<DVector<f64>>, at: &[f64]) -> Result<DMatrix<f64>> {
    jacobian_fd_scaled(f, at, 1e-5)
}

/// Central differences with step `scale (1 + |θ_k|)`.
pub fn jacobian_fd_scaled(f: impl Fn(&[f64]) -> Result<DVector<f64>>, at: &[f64], scale: f64) -> Result<DMatrix<f64>> {
    let mut cols = Vec::with_capacity(at.len());
    for k in 0..at.len() {
        let h = scale * (1.0 + at[k].abs());
        let mut up = at.to_vec();
        let mut down = at.to_vec();
        up[k] += h;
        down[k] -= h;
        let col = (f(&up)? - f(&down)?) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite moment derivative in coordinate {k}")));
        }
        cols.push(col);
    }
    if cols.is_empty() {
        return Err(Error::Argument("no parameters to differentiate".into()));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// `(Υ'ΛΥ)⁻¹ Υ'ΛΨΛΥ (Υ'ΛΥ)⁻¹`, symmetrized.
pub fn sandwich(upsilon: &DMatrix<f64>, weight: &DMatrix<f64>, psi_cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bread = upsilon.tr_mul(&(weight * upsilon));
    let inv = linalg::inverse_spd(&bread).map_err(|_| Error::Numeric("moment Jacobian is rank deficient".into()))?;
    let meat = upsilon.transpose() * weight * psi_cov * weight * upsilon;
    let s = &inv * meat * &inv;
    Ok((&s + s.transpose()) * 0.5)
}

/// Sandwich for the searched parameters when `(θ_1, θ_ω)` are profiled out.
///
/// The estimator solves the stacked equations `D'Λ ψ̄(θ) = 0` (with `D` the
/// total derivative `upsilon` of the profiled moments) and `ḡ(θ) = 0` (the
/// profiling regression's normal equations). Its covariance is
/// `J⁻¹ A Ω A' J⁻ᵀ` with `A = diag(D'Λ, I)`, `J = A ∂h̄/∂θ` and `Ω` the
/// second moment of `h_i = (ψ_i, g_i)`, so the noise of the profiling
/// regression is carried into the standard errors.
pub fn profiled_sandwich(
    problem: &GmmProblem,
    theta: &[f64],
    upsilon: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    psi: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (system, data) = (problem.system, problem.data);
    let (n, q, p) = (data.n_rows(), data.n_moments(), system.n_params());
    let free = problem.free();
    let omega = system.omega_index();
    let stacked = |t: &[f64]| -> Result<DVector<f64>> {
        let g = profiling_scores(system, data, t, problem.intercept).row_sum().transpose() / n as f64;
        Ok(DVector::from_iterator(q + 2, psi_bar(system, data, t).iter().chain(g.iter()).copied()))
    };
    let h_jac = jacobian_fd(stacked, theta)?;
    let mut a = DMatrix::zeros(p, q + 2);
    let dw = upsilon.transpose() * weight;
    for (r, &f) in free.iter().enumerate() {
        a.view_mut((f, 0), (1, q)).copy_from(&dw.row(r));
    }
    a[(0, q)] = 1.0;
    a[(omega, q + 1)] = 1.0;
    let j = &a * h_jac;
    let j_inv = j
        .try_inverse()
        .ok_or_else(|| Error::Numeric("stacked moment Jacobian is singular".into()))?;
    let scores = profiling_scores(system, data, theta, problem.intercept);
    let mut h = DMatrix::zeros(n, q + 2);
    h.view_mut((0, 0), (n, q)).copy_from(psi);
    h.view_mut((0, q), (n, 2)).copy_from(&scores);
    let omega_hat = psi_second_moment(&h);
    let full = &j_inv * &a * omega_hat * a.transpose() * j_inv.transpose();
    let block = DMatrix::from_fn(free.len(), free.len(), |r, c| full[(free[r], free[c])]);
    Ok((&block + block.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Diagnostics {
    pub boundary: bool,
    pub evaluations: usize,
    pub warnings: Vec<String>,
    /// Sandwich standard errors that ignore first-stage estimation (plug-in only).
    pub naive_se: Option<Vec<Option<f64>>>,
    pub bootstrap_draws: Option<usize>,
    pub bootstrap_skipped: Option<usize>,
}

/// Point estimate with inference for the searched parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgmmResult {
    pub estimator: String,
    pub param_names: Vec<String>,
    pub theta: Vec<f64>,
    /// Indices of the parameters covered by `sigma`.
    pub free: Vec<usize>,
    /// Asymptotic covariance of `√n (θ̂_free − θ_free)`.
    pub sigma: Vec<Vec<f64>>,
    pub se: Vec<Option<f64>>,
    pub ci: Vec<Option<(f64, f64)>>,
    pub objective: f64,
    pub psi_bar_norm: f64,
    pub n: usize,
    pub weighting: Weighting,
    pub diagnostics: Diagnostics,
}

impl DgmmResult {
    /// Estimate and standard error of a parameter by name.
    pub fn param(&self, name: &str) -> Option<(f64, Option<f64>)> {
        let k = self.param_names.iter().position(|p| p == name)?;
        Some((self.theta[k], self.se[k]))
    }

    /// Replaces the covariance and the intervals derived from it.
    pub fn set_sigma(&mut self, sigma: &DMatrix<f64>) {
        let p = self.theta.len();
        self.se = vec![None; p];
        self.ci = vec![None; p];
        for (a, &k) in self.free.iter().enumerate() {
            let se = (sigma[(a, a)].max(0.0) / self.n as f64).sqrt();
            self.se[k] = Some(se);
            self.ci[k] = Some((self.theta[k] - Z_975 * se, self.theta[k] + Z_975 * se));
        }
        self.sigma = (0..sigma.nrows())
            .map(|r| sigma.row(r).iter().copied().collect())
            .collect();
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let p = self.sigma.len();
        DMatrix::from_fn(p, p, |r, c| self.sigma[r][c])
    }
}

/// Minimizes the objective for a fixed weight matrix.
pub fn minimize_with_weight(problem: &GmmProblem, search: &SearchConfig, weight: &DMatrix<f64>) -> Result<Minimum> {
    let free = problem.free();
    let stages = problem.system.n_stages();
    if !problem.joint && stages < 2 {
        return Err(Error::Profiling(format!(
            "profiling needs first-stage values in two consecutive periods; the system has {stages} stage(s); use the joint search"
        )));
    }
    let f = |x: &[f64]| problem.objective(x, weight).unwrap_or(f64::INFINITY);
    if !problem.joint && free.len() == 1 {
        let (lo, hi) = search.bracket;
        return grid_golden(|x| f(&[x]), lo, hi, search.grid_points, search.tolerance);
    }
    let options = NelderMeadOptions {
        step: search.simplex_step,
        xtol: search.tolerance,
        ftol: 1e-14,
        max_iterations: search.max_iterations,
    };
    let start = match (&search.start, problem.joint) {
        (Some(s), _) if s.len() == free.len() => s.clone(),
        (Some(s), _) => {
            return Err(Error::Argument(format!("search start has {} entries, {} expected", s.len(), free.len())))
        }
        (None, false) => vec![0.5 * (search.bracket.0 + search.bracket.1); free.len()],
        (None, true) if stages < 2 => {
            let mut start = vec![0.5 * (search.bracket.0 + search.bracket.1); free.len()];
            start[0] = 0.0;
            start[problem.system.omega_index()] = 0.5;
            start
        }
        (None, true) => {
            // start the joint search from the profiled solution
            let profiled = GmmProblem::new(problem.system, problem.data, false).with_intercept(problem.intercept);
            let m = minimize_with_weight(&profiled, &SearchConfig { joint: false, ..search.clone() }, weight)?;
            profiled.expand(&m.x)?
        }
    };
    let mut m = nelder_mead_restarts(f, &start, search.restarts, search.restart_spread, search.seed, &options)?;
    if !problem.joint {
        let (lo, hi) = search.bracket;
        m.at_boundary = m.x.iter().any(|v| *v <= lo || *v >= hi);
    }
    Ok(m)
}

/// Where `Ψ̂` is evaluated.
pub enum PsiPoint<'p> {
    /// At the final estimate.
    Estimate,
    /// A full parameter vector per row (e.g. the estimate computed without
    /// the row's fold).
    PerRow(&'p [Vec<f64>]),
}

/// Estimates the parameters and their sandwich covariance.
pub fn minimize_gmm(
    system: &MomentSystem,
    data: &MomentData,
    search: &SearchConfig,
    weighting: Weighting,
    psi_point: PsiPoint,
    estimator: &str,
) -> Result<DgmmResult> {
    let problem = GmmProblem::new(system, data, search.joint).with_intercept(search.intercept);
    let q = data.n_moments();
    let n = data.n_rows();
    let identity = DMatrix::identity(q, q);
    let mut warnings = Vec::new();
    let psi_at = |theta_est: &[f64]| -> Result<DMatrix<f64>> {
        match &psi_point {
            PsiPoint::Estimate => Ok(psi_matrix_with(system, data, |_| theta_est)),
            PsiPoint::PerRow(per_row) => {
                if per_row.len() != n {
                    return Err(Error::Shape(format!("{} preliminary vectors for {n} rows", per_row.len())));
                }
                Ok(psi_matrix_with(system, data, |i| per_row[i].as_slice()))
            }
        }
    };
    let psi_cov_at = |theta_est: &[f64]| psi_at(theta_est).map(|psi| psi_second_moment(&psi));
    let mut minimum = minimize_with_weight(&problem, search, &identity)?;
    let mut evaluations = minimum.evaluations;
    let weight = match weighting {
        Weighting::Identity => identity,
        Weighting::Optimal => {
            let theta1 = problem.expand(&minimum.x)?;
            let w = linalg::inverse_spd(&psi_cov_at(&theta1)?)
                .map_err(|_| Error::Numeric("moment covariance is singular; optimal weighting unavailable".into()))?;
            minimum = minimize_with_weight(&problem, search, &w)?;
            evaluations += minimum.evaluations;
            w
        }
    };
    if minimum.at_boundary {
        warnings.push(format!("optimum {:?} lies on the search boundary", minimum.x));
    }
    let theta = problem.expand(&minimum.x)?;
    let upsilon = jacobian_fd(|x| problem.psi_bar(x), &minimum.x)?;
    let sigma = if problem.joint {
        sandwich(&upsilon, &weight, &psi_cov_at(&theta)?)?
    } else {
        profiled_sandwich(&problem, &theta, &upsilon, &weight, &psi_at(&theta)?)?
    };
    let pb = problem.psi_bar(&minimum.x)?;
    let mut result = DgmmResult {
        estimator: estimator.to_string(),
        param_names: system.param_names(),
        theta,
        free: problem.free(),
        sigma: Vec::new(),
        se: Vec::new(),
        ci: Vec::new(),
        objective: minimum.value,
        psi_bar_norm: pb.norm(),
        n,
        weighting,
        diagnostics: Diagnostics {
            boundary: minimum.at_boundary,
            evaluations,
            warnings,
            ..Default::default()
        },
    };
    result.set_sigma(&sigma);
    Ok(result)
}

/// Point estimate only (identity weighting), for preliminary and bootstrap fits.
pub fn point_estimate(system: &MomentSystem, data: &MomentData, search: &SearchConfig) -> Result<Vec<f64>> {
    let problem = GmmProblem::new(system, data, search.joint).with_intercept(search.intercept);
    let q = data.n_moments();
    let m = minimize_with_weight(&problem, search, &DMatrix::identity(q, q))?;
    problem.expand(&m.x)
}
