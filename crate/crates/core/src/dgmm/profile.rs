//! Concentrating out the intercept and persistence: given the input
//! elasticities, `η̂_t − x_t'θ_x = θ_1 + ω_t` follows an AR(1), so its OLS
//! slope on the lag estimates `θ_ω` and the intercept `c` gives
//! `θ_1 = c / (1 − θ_ω)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::psi::MomentData;
use crate::error::{Error, Result};
use crate::moments::MomentSystem;

/// Smallest admissible `|1 − θ_ω|`.
pub const UNIT_ROOT_GUARD: f64 = 1e-6;

/// How the regression intercept `c` maps to `θ_1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptRule {
    /// `θ_1 = c / (1 − θ_ω)`, exact for any true intercept.
    #[default]
    BackSolved,
    /// `θ_1 = c`, which is only right when the true intercept is zero. The
    /// structural residuals then keep a nonzero mean away from the true
    /// elasticities, which sharpens the profiled objective.
    Regression,
}

/// Returns `(θ_1, θ_ω)` for the given input coefficients, pooling every
/// consecutive pair of first-stage values.
pub fn profile_parameters(system: &MomentSystem, md: &MomentData, theta_x: &[f64]) -> Result<(f64, f64)> {
    profile_parameters_with(system, md, theta_x, InterceptRule::BackSolved)
}

pub fn profile_parameters_with(
    system: &MomentSystem,
    md: &MomentData,
    theta_x: &[f64],
    rule: InterceptRule,
) -> Result<(f64, f64)> {
    if theta_x.len() != system.inputs().len() {
        return Err(Error::Argument(format!(
            "{} input coefficients for {} inputs",
            theta_x.len(),
            system.inputs().len()
        )));
    }
    let stages = system.n_stages();
    if stages < 2 {
        return Err(Error::Profiling(format!(
            "profiling needs first-stage values in two consecutive periods; the system has {stages} stage(s)"
        )));
    }
    let net = |i: usize, s: usize| {
        md.eta[(i, s)]
            - theta_x
                .iter()
                .zip(&md.data.x)
                .map(|(b, x)| b * x[(i, s)])
                .sum::<f64>()
    };
    let mut lag = Vec::with_capacity(md.n_rows() * (stages - 1));
    let mut cur = Vec::with_capacity(lag.capacity());
    for i in 0..md.n_rows() {
        for s in 1..stages {
            lag.push(net(i, s - 1));
            cur.push(net(i, s));
        }
    }
    let n = lag.len() as f64;
    let mx = lag.iter().sum::<f64>() / n;
    let my = cur.iter().sum::<f64>() / n;
    let sxx: f64 = lag.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lag.iter().zip(&cur).map(|(x, y)| (x - mx) * (y - my)).sum();
    let scale = lag.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    if !(sxx > 1e-12 * scale) {
        return Err(Error::Profiling("lagged series has no variation; the slope is undefined".into()));
    }
    let omega = sxy / sxx;
    if (1.0 - omega).abs() <= UNIT_ROOT_GUARD {
        return Err(Error::Profiling(format!("persistence {omega} is within {UNIT_ROOT_GUARD} of one")));
    }
    let intercept = my - omega * mx;
    Ok(match rule {
        InterceptRule::BackSolved => (intercept / (1.0 - omega), omega),
        InterceptRule::Regression => (intercept, omega),
    })
}

/// Per-firm scores of the profiling regression at a full parameter vector,
/// as `n × 2` columns `(e, e · u_lag)` summed over a firm's stage pairs,
/// where `e = u − c − θ_ω u_lag` and `c` is `θ_1` or `θ_1 (1 − θ_ω)` by
/// `rule`. Their mean is zero at the profiled values.
pub fn profiling_scores(system: &MomentSystem, md: &MomentData, theta: &[f64], rule: InterceptRule) -> DMatrix<f64> {
    let inputs = system.inputs().len();
    let omega = theta[system.omega_index()];
    let c = match rule {
        InterceptRule::BackSolved => theta[0] * (1.0 - omega),
        InterceptRule::Regression => theta[0],
    };
    let net = |i: usize, s: usize| {
        md.eta[(i, s)]
            - (0..inputs)
                .map(|k| theta[1 + k] * md.data.x[k][(i, s)])
                .sum::<f64>()
    };
    let mut out = DMatrix::zeros(md.n_rows(), 2);
    for i in 0..md.n_rows() {
        for s in 1..system.n_stages() {
            let lag = net(i, s - 1);
            let e = net(i, s) - c - omega * lag;
            out[(i, 0)] += e;
            out[(i, 1)] += e * lag;
        }
    }
    out
}
