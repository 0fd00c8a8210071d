//! Directional check of second-order sensitivity to the first stage.

use nalgebra::DMatrix;
use serde::Serialize;

use super::psi::{psi_bar, MomentData};
use crate::error::{Error, Result};
use crate::moments::MomentSystem;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalvingCheck {
    /// `‖ψ̄(η̂ + τb) − ψ̄(η̂)‖ / τ`.
    pub quotient: f64,
    /// Same at `τ/2`.
    pub quotient_half: f64,
    /// `quotient_half / quotient`: ½ when the moment reacts only at second
    /// order, 1 when it reacts at first order.
    pub ratio: f64,
}

/// Shifts the first-stage values by `τ · direction` (`rows × stages`) and
/// compares the difference quotients of `ψ̄(θ)` at `τ` and `τ/2`.
pub fn halving_check(
    system: &MomentSystem,
    md: &MomentData,
    theta: &[f64],
    direction: &DMatrix<f64>,
    tau: f64,
) -> Result<HalvingCheck> {
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::Argument(format!("step {tau} must be finite and nonzero")));
    }
    let base = psi_bar(system, md, theta);
    let quotient = |t: f64| -> Result<f64> {
        let shifted = md.with_eta(&md.eta + direction * t)?;
        Ok((psi_bar(system, &shifted, theta) - &base).norm() / t.abs())
    };
    let q1 = quotient(tau)?;
    let q2 = quotient(tau / 2.0)?;
    let ratio = if q1 > 0.0 { q2 / q1 } else { f64::NAN };
    Ok(HalvingCheck {
        quotient: q1,
        quotient_half: q2,
        ratio,
    })
}
