//! Simulated capital-only production panels.
//!
//! Logs are upper case, levels lower case. Productivity is a stationary
//! Gaussian AR(1); capital accumulates as `k_t = (1−δ) k_{t−1} + μ_t i_{t−1}`
//! with lognormal `μ`; log investment follows
//! `I = γ0 + γ1 K + γ2 ω + exp(−0.5 K + 0.5 ω) + shock`; and
//! `Y = θ_1 + θ_k K + ω + ε`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{vars, PanelDataset};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub theta_1: f64,
    pub theta_k: f64,
    pub theta_omega: f64,
    /// Stationary standard deviation of productivity.
    pub sigma_omega: f64,
    pub one_minus_delta: f64,
    pub gamma_0: f64,
    pub gamma_1: f64,
    pub gamma_2: f64,
    /// Mean and sd of `ln μ`.
    pub mu_log_mean: f64,
    pub mu_log_sd: f64,
    /// Sd of the normal shock added to log investment (0 in the baseline).
    pub invest_shock_sd: f64,
    /// Total simulated periods, of which the last `keep_periods` are kept.
    pub burn_in: usize,
    pub keep_periods: usize,
    pub eps_sd: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            theta_1: 0.0,
            theta_k: 1.0,
            theta_omega: 0.7,
            sigma_omega: 0.1,
            one_minus_delta: 0.9,
            gamma_0: 0.0,
            gamma_1: -0.7,
            gamma_2: 5.0,
            mu_log_mean: 1.0,
            mu_log_sd: 1.0,
            invest_shock_sd: 0.0,
            burn_in: 100,
            keep_periods: 3,
            eps_sd: 0.1,
        }
    }
}

impl DgpConfig {
    /// The three designs: no investment shock, then shocks with sd 0.5 and 0.7.
    pub fn design(number: usize) -> Result<Self> {
        let invest_shock_sd = match number {
            1 => 0.0,
            2 => 0.5,
            3 => 0.7,
            _ => return Err(Error::Argument(format!("design must be 1, 2 or 3, got {number}"))),
        };
        Ok(Self {
            invest_shock_sd,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_omega", self.sigma_omega),
            ("mu_log_sd", self.mu_log_sd),
            ("invest_shock_sd", self.invest_shock_sd),
            ("eps_sd", self.eps_sd),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Argument(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.theta_omega.abs() < 1.0) {
            return Err(Error::Argument(format!("theta_omega must lie in (-1, 1), got {}", self.theta_omega)));
        }
        if self.keep_periods == 0 || self.keep_periods > self.burn_in {
            return Err(Error::Argument(format!(
                "need 1 ≤ keep_periods ≤ burn_in, got {} and {}",
                self.keep_periods, self.burn_in
            )));
        }
        Ok(())
    }

    /// Log investment without the shock.
    pub fn investment_policy(&self, capital: f64, omega: f64) -> f64 {
        self.gamma_0 + self.gamma_1 * capital + self.gamma_2 * omega + (-0.5 * capital + 0.5 * omega).exp()
    }

    /// True parameters `(θ_1, θ_k, θ_ω)`.
    pub fn truth(&self) -> [f64; 3] {
        [self.theta_1, self.theta_k, self.theta_omega]
    }
}

/// One firm's kept periods.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmPath {
    pub output: Vec<f64>,
    pub capital: Vec<f64>,
    pub investment: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Simulates one firm; `None` if the path leaves the finite range.
pub fn simulate_firm(config: &DgpConfig, rng: &mut impl Rng) -> Option<FirmPath> {
    let innovation_sd = config.sigma_omega * (1.0 - config.theta_omega * config.theta_omega).sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mu = LogNormal::new(config.mu_log_mean, config.mu_log_sd).ok()?;
    let total = config.burn_in;
    let keep_from = total - config.keep_periods;
    let mut path = FirmPath {
        output: Vec::with_capacity(config.keep_periods),
        capital: Vec::with_capacity(config.keep_periods),
        investment: Vec::with_capacity(config.keep_periods),
        omega: Vec::with_capacity(config.keep_periods),
    };
    let mut omega = config.sigma_omega * std_normal.sample(rng);
    let mut k_level = 1.0f64;
    let mut i_level = 0.0f64;
    for t in 0..total {
        if t > 0 {
            omega = config.theta_omega * omega + innovation_sd * std_normal.sample(rng);
            k_level = config.one_minus_delta * k_level + mu.sample(rng) * i_level;
        }
        let capital = k_level.ln();
        let investment = config.investment_policy(capital, omega) + config.invest_shock_sd * std_normal.sample(rng);
        i_level = investment.exp();
        if !(capital.is_finite() && investment.is_finite() && i_level.is_finite() && k_level > 0.0) {
            return None;
        }
        if t >= keep_from {
            let eps = config.eps_sd * std_normal.sample(rng);
            path.output.push(config.theta_1 + config.theta_k * capital + omega + eps);
            path.capital.push(capital);
            path.investment.push(investment);
            path.omega.push(omega);
        }
    }
    Some(path)
}

/// Largest share of firms that may need a fresh draw.
pub const MAX_RESIMULATION_SHARE: f64 = 0.01;

/// A simulated panel plus the latent productivity (not part of the data).
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: PanelDataset,
    pub omega: DMatrix<f64>,
    pub resimulated: usize,
}

/// Simulates `n` firms. Firm `i` draws from its own stream, so firms do not
/// depend on each other; a firm whose path overflows is redrawn from the
/// next sub-stream.
pub fn simulate_dgp(config: &DgpConfig, n: usize, seed: u64) -> Result<SimulatedPanel> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Argument("need at least one firm".into()));
    }
    let t = config.keep_periods;
    let mut y = DMatrix::zeros(n, t);
    let mut k = DMatrix::zeros(n, t);
    let mut inv = DMatrix::zeros(n, t);
    let mut w = DMatrix::zeros(n, t);
    let budget = (MAX_RESIMULATION_SHARE * n as f64).floor() as usize;
    let mut resimulated = 0;
    for firm in 0..n {
        let mut attempt = 0u64;
        let path = loop {
            let mut rng = seeding::stream(seed, &[firm as u64, attempt]);
            if let Some(p) = simulate_firm(config, &mut rng) {
                break p;
            }
            resimulated += 1;
            attempt += 1;
            if resimulated > budget {
                return Err(Error::Simulation(format!(
                    "{resimulated} firms overflowed, more than {:.0}% of {n}",
                    MAX_RESIMULATION_SHARE * 100.0
                )));
            }
        };
        for s in 0..t {
            y[(firm, s)] = path.output[s];
            k[(firm, s)] = path.capital[s];
            inv[(firm, s)] = path.investment[s];
            w[(firm, s)] = path.omega[s];
        }
    }
    let mut variables = BTreeMap::new();
    variables.insert(vars::OUTPUT.to_string(), y);
    variables.insert(vars::CAPITAL.to_string(), k);
    variables.insert(vars::INVESTMENT.to_string(), inv);
    let panel = PanelDataset::new(
        (1..=n).map(|i| i.to_string()).collect(),
        (1..=t as i64).collect(),
        variables,
    )?;
    Ok(SimulatedPanel {
        panel,
        omega: w,
        resimulated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_policy_is_reproduced() {
        let config = DgpConfig::default();
        let sim = simulate_dgp(&config, 50, 3).unwrap();
        let k = sim.panel.var(vars::CAPITAL).unwrap();
        let i = sim.panel.var(vars::INVESTMENT).unwrap();
        for f in 0..50 {
            for t in 0..3 {
                let want = config.investment_policy(k[(f, t)], sim.omega[(f, t)]);
                assert!((i[(f, t)] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn same_seed_same_panel() {
        let a = simulate_dgp(&DgpConfig::design(3).unwrap(), 20, 11).unwrap();
        let b = simulate_dgp(&DgpConfig::design(3).unwrap(), 20, 11).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_eq!(a.panel.n_periods(), 3);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = DgpConfig {
            invest_shock_sd: -0.1,
            ..DgpConfig::default()
        };
        assert!(matches!(simulate_dgp(&bad, 5, 0), Err(Error::Argument(_))));
        let bad = DgpConfig {
            theta_omega: 1.0,
            ..DgpConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(DgpConfig::design(4).is_err());
    }
}
