//! Conditional moment restrictions of the proxy-variable production model.
//!
//! Output follows `Y_t = θ_1 + x_t'θ_x + ω_t + ε_t` with productivity
//! `ω_t = θ_ω ω_{t-1} + innovation`. For each stage `s = 0..T-2` there is a
//! first-stage restriction `E[Y_s − η_s(Z_s) | Z_s] = 0` and a structural one
//! `E[Y_{s+1} − θ_1 − x_{s+1}'θ_x − θ_ω(η_s(Z_s) − θ_1 − x_s'θ_x) | Z_s] = 0`,
//! where `Z_s` stacks the proxy and the inputs of period `s`.
//!
//! Parameters are ordered `(θ_1, θ_x..., θ_ω)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{vars, PanelDataset};
use crate::error::{Error, Result};
use crate::firststage::EtaTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Capital as the only input, investment as proxy, three periods.
    CapitalOnly,
    /// Labor and capital inputs, intermediates as proxy, `T ≥ 2` periods.
    CobbDouglasTwoInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmrRole {
    /// Identifies one first-stage regression; free of θ.
    FirstStage,
    Structural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CmrSpec {
    pub index: usize,
    pub role: CmrRole,
    /// Stage `s`: the restriction conditions on `Z_s` and involves `η_s`.
    pub stage: usize,
}

/// `var` from period `stage + offset`, raised to `power`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instrument {
    pub var: String,
    pub offset: usize,
    pub power: i32,
}

impl Instrument {
    pub fn new(var: &str, offset: usize, power: i32) -> Self {
        Self {
            var: var.to_string(),
            offset,
            power,
        }
    }

    pub fn value(&self, panel: &PanelDataset, firm: usize, stage: usize) -> Result<f64> {
        Ok(panel.value(&self.var, firm, stage + self.offset)?.powi(self.power))
    }
}

/// A full set of restrictions with its starting-instrument menu.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    kind: ModelKind,
    n_periods: usize,
    inputs: Vec<String>,
    proxy: String,
    cmrs: Vec<CmrSpec>,
    /// `menu[q][j]`: starting instrument for restriction `j` in vector `q`.
    menu: Vec<Vec<Instrument>>,
    /// Conventional instruments `h(Z_s)` applied to every structural restriction.
    plug_in: Vec<Instrument>,
}

/// Four restrictions for three periods of `(y, k, i)`, ordered
/// `[first stage 1, structural 2, first stage 2, structural 3]`, with the
/// four-vector starting menu used in the simulations.
pub fn capital_only_system() -> MomentSystem {
    use CmrRole::*;
    let cmrs = [(FirstStage, 0), (Structural, 0), (FirstStage, 1), (Structural, 1)]
        .iter()
        .enumerate()
        .map(|(index, &(role, stage))| CmrSpec { index, role, stage })
        .collect();
    let (k, i) = (vars::CAPITAL, vars::INVESTMENT);
    let lvl = |v: &str| Instrument::new(v, 0, 1);
    let menu = vec![
        vec![lvl(k), lvl(k), lvl(k), lvl(k)],
        vec![lvl(i), lvl(i), lvl(i), lvl(i)],
        vec![lvl(k), lvl(k), lvl(i), lvl(i)],
        vec![lvl(k), lvl(i), lvl(i), lvl(i)],
    ];
    let plug_in = vec![lvl(k), lvl(i), Instrument::new(k, 0, 2), Instrument::new(i, 0, 2)];
    MomentSystem {
        kind: ModelKind::CapitalOnly,
        n_periods: 3,
        inputs: vec![k.to_string()],
        proxy: i.to_string(),
        cmrs,
        menu,
        plug_in,
    }
}

/// `2(T−1)` restrictions for `(y, l, k, e)`, ordered first stages then
/// structural, with the five starting vectors of the two-input application.
pub fn cobb_douglas_two_input_system(n_periods: usize) -> Result<MomentSystem> {
    if n_periods < 2 {
        return Err(Error::System(format!("two-input system needs T ≥ 2, got {n_periods}")));
    }
    let stages = n_periods - 1;
    let mut cmrs: Vec<CmrSpec> = (0..stages)
        .map(|s| CmrSpec {
            index: s,
            role: CmrRole::FirstStage,
            stage: s,
        })
        .collect();
    cmrs.extend((0..stages).map(|s| CmrSpec {
        index: stages + s,
        role: CmrRole::Structural,
        stage: s,
    }));
    let (l, k, e) = (vars::LABOR, vars::CAPITAL, vars::INTERMEDIATES);
    // (first-stage entry, structural entry) for every stage
    let pairs = [
        (Instrument::new(k, 0, 1), Instrument::new(k, 0, 1)),
        (Instrument::new(k, 0, 1), Instrument::new(k, 1, 1)),
        (Instrument::new(l, 0, 1), Instrument::new(l, 0, 1)),
        (Instrument::new(k, 0, 2), Instrument::new(k, 1, 2)),
        (Instrument::new(k, 0, 4), Instrument::new(k, 1, 4)),
    ];
    let menu = pairs
        .iter()
        .map(|(fs, st)| {
            cmrs.iter()
                .map(|c| match c.role {
                    CmrRole::FirstStage => fs.clone(),
                    CmrRole::Structural => st.clone(),
                })
                .collect()
        })
        .collect();
    let plug_in = [l, k, e]
        .iter()
        .flat_map(|v| [Instrument::new(v, 0, 1), Instrument::new(v, 0, 2)])
        .collect();
    Ok(MomentSystem {
        kind: ModelKind::CobbDouglasTwoInput,
        n_periods,
        inputs: vec![l.to_string(), k.to_string()],
        proxy: e.to_string(),
        cmrs,
        menu,
        plug_in,
    })
}

impl MomentSystem {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_stages(&self) -> usize {
        self.n_periods - 1
    }

    pub fn n_cmrs(&self) -> usize {
        self.cmrs.len()
    }

    pub fn cmrs(&self) -> &[CmrSpec] {
        &self.cmrs
    }

    /// Production inputs in parameter order.
    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn proxy(&self) -> &str {
        &self.proxy
    }

    /// `1 + inputs + 1`.
    pub fn n_params(&self) -> usize {
        self.inputs.len() + 2
    }

    /// Index of `θ_ω` in the parameter vector.
    pub fn omega_index(&self) -> usize {
        self.inputs.len() + 1
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["theta_1".to_string()];
        names.extend(self.inputs.iter().map(|v| format!("theta_{v}")));
        names.push("theta_omega".to_string());
        names
    }

    pub fn menu(&self) -> &[Vec<Instrument>] {
        &self.menu
    }

    pub fn menu_size(&self) -> usize {
        self.menu.len()
    }

    pub fn plug_in_instruments(&self) -> &[Instrument] {
        &self.plug_in
    }

    /// Replaces the starting-instrument menu (each entry must have one
    /// instrument per restriction).
    pub fn with_menu(mut self, menu: Vec<Vec<Instrument>>) -> Result<Self> {
        if menu.is_empty() || menu.iter().any(|v| v.len() != self.cmrs.len()) {
            return Err(Error::System(format!(
                "menu vectors must have {} entries and the menu must be nonempty",
                self.cmrs.len()
            )));
        }
        self.menu = menu;
        Ok(self)
    }

    pub fn with_plug_in(mut self, instruments: Vec<Instrument>) -> Self {
        self.plug_in = instruments;
        self
    }

    /// Conditioning variables `Z_s`: proxy first, then inputs.
    pub fn conditioning(&self, stage: usize) -> Vec<(&str, usize)> {
        std::iter::once(self.proxy.as_str())
            .chain(self.inputs.iter().map(String::as_str))
            .map(|v| (v, stage))
            .collect()
    }

    /// First-stage regressions `Y_s` on `Z_s`, one per stage.
    pub fn eta_targets(&self) -> Vec<EtaTarget> {
        (0..self.n_stages())
            .map(|s| EtaTarget::new((vars::OUTPUT, s), &self.conditioning(s)))
            .collect()
    }

    /// Checks the panel carries every variable and period the system uses.
    pub fn check_panel(&self, panel: &PanelDataset) -> Result<()> {
        for v in std::iter::once(vars::OUTPUT)
            .chain(std::iter::once(self.proxy.as_str()))
            .chain(self.inputs.iter().map(String::as_str))
        {
            if !panel.has(v) {
                return Err(Error::System(format!("panel lacks variable `{v}`")));
            }
        }
        if self.kind == ModelKind::CapitalOnly && panel.n_periods() != 3 {
            return Err(Error::System(format!(
                "capital-only system needs exactly 3 periods, panel has {}",
                panel.n_periods()
            )));
        }
        if panel.n_periods() < self.n_periods {
            return Err(Error::System(format!(
                "system needs {} periods, panel has {}",
                self.n_periods,
                panel.n_periods()
            )));
        }
        Ok(())
    }

    /// Derivative of restriction `j` with respect to its `η_s`: −1 for
    /// first-stage rows, −θ_ω for structural rows.
    pub fn nu_tilde(&self, j: usize, theta_omega: f64) -> f64 {
        match self.cmrs[j].role {
            CmrRole::FirstStage => -1.0,
            CmrRole::Structural => -theta_omega,
        }
    }

    /// Scale of the effective regressors of restriction `j` after imposing a
    /// common coefficient vector across restrictions sharing `η_s`:
    /// `ν̃_j · Σ_{j' at the same stage} ν̃_{j'}`.
    pub fn design_factor(&self, j: usize, theta_omega: f64) -> f64 {
        let stage = self.cmrs[j].stage;
        let total: f64 = self
            .cmrs
            .iter()
            .filter(|c| c.stage == stage)
            .map(|c| self.nu_tilde(c.index, theta_omega))
            .sum();
        self.nu_tilde(j, theta_omega) * total
    }

    /// Starting-instrument values `f_j` of menu vector `q` for the given
    /// firms, one column per restriction.
    pub fn menu_values(&self, panel: &PanelDataset, q: usize, firms: &[usize]) -> Result<DMatrix<f64>> {
        self.instrument_matrix(panel, &self.menu[q], firms)
    }

    fn instrument_matrix(&self, panel: &PanelDataset, row: &[Instrument], firms: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(firms.len(), self.cmrs.len());
        for (j, c) in self.cmrs.iter().enumerate() {
            for (r, &i) in firms.iter().enumerate() {
                out[(r, j)] = row[j].value(panel, i, c.stage)?;
            }
        }
        Ok(out)
    }

    /// Plug-in instrument values as `[q][firm × restriction]` matrices:
    /// `h_q(Z_s)` on structural rows, zero on first-stage rows.
    pub fn plug_in_values(&self, panel: &PanelDataset, firms: &[usize]) -> Result<Vec<DMatrix<f64>>> {
        self.plug_in
            .iter()
            .map(|h| {
                let mut out = DMatrix::zeros(firms.len(), self.cmrs.len());
                for (j, c) in self.cmrs.iter().enumerate() {
                    if c.role == CmrRole::Structural {
                        for (r, &i) in firms.iter().enumerate() {
                            out[(r, j)] = h.value(panel, i, c.stage)?;
                        }
                    }
                }
                Ok(out)
            })
            .collect()
    }

    /// Per-firm data needed to evaluate the residuals.
    pub fn firm_data(&self, panel: &PanelDataset) -> Result<FirmData> {
        self.check_panel(panel)?;
        let y = panel.var(vars::OUTPUT)?.columns(0, self.n_periods).into_owned();
        let x = self
            .inputs
            .iter()
            .map(|v| Ok(panel.var(v)?.columns(0, self.n_periods).into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Ok(FirmData { y, x })
    }

    /// `θ_1 + x_t'θ_x` for one firm.
    pub fn production(&self, data: &FirmData, firm: usize, t: usize, theta: &[f64]) -> f64 {
        theta[0] + data.x.iter().enumerate().map(|(k, m)| theta[1 + k] * m[(firm, t)]).sum::<f64>()
    }

    /// Residual of restriction `j` for one firm; `eta[s]` is the firm's
    /// first-stage value for stage `s`.
    pub fn residual(&self, data: &FirmData, firm: usize, j: usize, theta: &[f64], eta: &[f64]) -> f64 {
        let c = self.cmrs[j];
        let s = c.stage;
        match c.role {
            CmrRole::FirstStage => data.y[(firm, s)] - eta[s],
            CmrRole::Structural => {
                let omega = theta[self.omega_index()];
                data.y[(firm, s + 1)]
                    - self.production(data, firm, s + 1, theta)
                    - omega * (eta[s] - self.production(data, firm, s, theta))
            }
        }
    }

    /// All residuals for one firm.
    pub fn residuals(&self, data: &FirmData, firm: usize, theta: &[f64], eta: &[f64]) -> Vec<f64> {
        (0..self.cmrs.len()).map(|j| self.residual(data, firm, j, theta, eta)).collect()
    }
}

/// Output and input matrices (firm × period) extracted once from a panel.
#[derive(Debug, Clone)]
pub struct FirmData {
    pub y: DMatrix<f64>,
    /// One matrix per production input, in parameter order.
    pub x: Vec<DMatrix<f64>>,
}

impl FirmData {
    pub fn n_firms(&self) -> usize {
        self.y.nrows()
    }

    /// The rows of the given firms, in order.
    pub fn select_rows(&self, firms: &[usize]) -> FirmData {
        FirmData {
            y: self.y.select_rows(firms),
            x: self.x.iter().map(|m| m.select_rows(firms)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn panel_from(vars: &[(&str, DMatrix<f64>)]) -> PanelDataset {
        let n = vars[0].1.nrows();
        let t = vars[0].1.ncols();
        let map: BTreeMap<String, DMatrix<f64>> = vars.iter().map(|(k, m)| (k.to_string(), m.clone())).collect();
        PanelDataset::new((0..n).map(|i| i.to_string()).collect(), (1..=t as i64).collect(), map).unwrap()
    }

    /// Noiseless capital-only panel with η known exactly.
    fn noiseless(theta: [f64; 3]) -> (PanelDataset, Vec<Vec<f64>>) {
        let n = 6;
        let k = DMatrix::from_fn(n, 3, |i, t| 1.0 + 0.3 * i as f64 - 0.2 * t as f64);
        let i_ = DMatrix::from_fn(n, 3, |i, t| (i * t) as f64 * 0.1);
        let mut omega = DMatrix::zeros(n, 3);
        for i in 0..n {
            omega[(i, 0)] = 0.05 * i as f64;
            for t in 1..3 {
                omega[(i, t)] = theta[2] * omega[(i, t - 1)];
            }
        }
        let y = DMatrix::from_fn(n, 3, |i, t| theta[0] + theta[1] * k[(i, t)] + omega[(i, t)]);
        let eta: Vec<Vec<f64>> = (0..n).map(|i| (0..2).map(|t| y[(i, t)]).collect()).collect();
        (panel_from(&[("y", y), ("k", k), ("i", i_)]), eta)
    }

    #[test]
    fn capital_only_shape() {
        let s = capital_only_system();
        assert_eq!(s.n_cmrs(), 4);
        assert_eq!(s.menu_size(), 4);
        assert_eq!(s.n_params(), 3);
        assert_eq!(s.eta_targets().len(), 2);
        assert_eq!(s.conditioning(1), vec![("i", 1), ("k", 1)]);
    }

    #[test]
    fn residuals_vanish_at_truth_without_noise() {
        let theta = [0.0, 1.0, 0.7];
        let (p, eta) = noiseless(theta);
        let s = capital_only_system();
        let d = s.firm_data(&p).unwrap();
        for (i, e) in eta.iter().enumerate() {
            assert!(s.residuals(&d, i, &theta, e).iter().all(|r| r.abs() < 1e-14));
        }
    }

    #[test]
    fn structural_without_persistence_is_output_gap() {
        let (p, eta) = noiseless([0.0, 1.0, 0.7]);
        let s = capital_only_system();
        let d = s.firm_data(&p).unwrap();
        let theta = [0.3, 0.8, 0.0];
        let r = s.residual(&d, 2, 1, &theta, &eta[2]);
        assert!((r - (d.y[(2, 1)] - 0.3 - 0.8 * d.x[0][(2, 1)])).abs() < 1e-15);
    }

    #[test]
    fn wrong_period_count_is_system_error() {
        let m = DMatrix::from_element(3, 4, 1.0);
        let p = panel_from(&[("y", m.clone()), ("k", m.clone()), ("i", m)]);
        assert!(matches!(capital_only_system().firm_data(&p), Err(Error::System(_))));
    }

    #[test]
    fn two_input_counts() {
        assert_eq!(cobb_douglas_two_input_system(2).unwrap().n_cmrs(), 2);
        assert_eq!(cobb_douglas_two_input_system(5).unwrap().n_cmrs(), 8);
        assert!(cobb_douglas_two_input_system(1).is_err());
    }

    #[test]
    fn two_input_missing_variable() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let p = panel_from(&[("y", m.clone()), ("k", m.clone()), ("e", m)]);
        let s = cobb_douglas_two_input_system(3).unwrap();
        assert!(matches!(s.firm_data(&p), Err(Error::System(_))));
    }

    #[test]
    fn two_input_zero_slopes_leave_output_minus_constant() {
        let m = DMatrix::from_fn(2, 3, |i, t| (i + 2 * t) as f64);
        let p = panel_from(&[("y", m.clone()), ("k", m.clone() * 0.5), ("l", m.clone() * 2.0), ("e", m)]);
        let s = cobb_douglas_two_input_system(3).unwrap();
        let d = s.firm_data(&p).unwrap();
        let theta = [0.4, 0.0, 0.0, 0.0];
        for firm in 0..2 {
            for st in 0..2 {
                let j = 2 + st;
                let r = s.residual(&d, firm, j, &theta, &[9.0, 9.0]);
                assert!((r - (d.y[(firm, st + 1)] - 0.4)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_input_noiseless_linear_eta() {
        let theta = [0.2, 0.6, 0.3, 0.5];
        let n = 5;
        let l = DMatrix::from_fn(n, 3, |i, t| 1.0 + 0.1 * (i * t) as f64);
        let k = DMatrix::from_fn(n, 3, |i, t| 2.0 - 0.3 * i as f64 + 0.05 * t as f64);
        let mut omega = DMatrix::zeros(n, 3);
        for i in 0..n {
            omega[(i, 0)] = 0.1 * i as f64 - 0.2;
            for t in 1..3 {
                omega[(i, t)] = theta[3] * omega[(i, t - 1)];
            }
        }
        // proxy linear in (ω, l, k), so η is linear in (e, l, k)
        let e = DMatrix::from_fn(n, 3, |i, t| 2.0 * omega[(i, t)] + l[(i, t)] - k[(i, t)]);
        let y = DMatrix::from_fn(n, 3, |i, t| theta[0] + theta[1] * l[(i, t)] + theta[2] * k[(i, t)] + omega[(i, t)]);
        let p = panel_from(&[("y", y), ("k", k.clone()), ("l", l.clone()), ("e", e.clone())]);
        let s = cobb_douglas_two_input_system(3).unwrap();
        let d = s.firm_data(&p).unwrap();
        for i in 0..n {
            let eta: Vec<f64> = (0..2)
                .map(|t| {
                    let w = 0.5 * (e[(i, t)] - l[(i, t)] + k[(i, t)]);
                    theta[0] + theta[1] * l[(i, t)] + theta[2] * k[(i, t)] + w
                })
                .collect();
            assert!(s.residuals(&d, i, &theta, &eta).iter().all(|r| r.abs() < 1e-13));
        }
    }

    #[test]
    fn structural_residual_is_affine_in_levels() {
        let (p, eta) = noiseless([0.0, 1.0, 0.7]);
        let s = capital_only_system();
        let d = s.firm_data(&p).unwrap();
        for idx in [0usize, 1] {
            let at = |v: f64| {
                let mut th = [0.1, 0.9, 0.6];
                th[idx] = v;
                s.residual(&d, 3, 3, &th, &eta[3])
            };
            let second = at(1.3) - 2.0 * at(0.8) + at(0.3);
            assert!(second.abs() < 1e-13);
        }
    }

    #[test]
    fn design_factors() {
        let s = capital_only_system();
        assert_eq!(s.design_factor(0, 1.0), 2.0);
        assert_eq!(s.design_factor(1, 0.5), 0.5 * 1.5);
        assert_eq!(s.design_factor(1, 0.0), 0.0);
    }
}
