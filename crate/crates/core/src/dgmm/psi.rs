//! Moment functions `ψ_q = Σ_j m_j(θ, η̂) · κ_{j,q}` aligned on a set of firms.

use nalgebra::{DMatrix, DVector};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::firststage::CrossfitEta;
use crate::moments::{FirmData, MomentSystem};

/// Inputs of the moment function on a fixed set of rows: residual data,
/// first-stage values (`rows × stages`) and instrument values
/// (`[q]` of `rows × restrictions`).
#[derive(Debug, Clone)]
pub struct MomentData {
    pub data: FirmData,
    pub eta: DMatrix<f64>,
    pub instruments: Vec<DMatrix<f64>>,
}

impl MomentData {
    pub fn new(system: &MomentSystem, data: FirmData, eta: DMatrix<f64>, instruments: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = data.n_firms();
        if eta.nrows() != n || eta.ncols() != system.n_stages() {
            return Err(Error::Shape(format!(
                "first-stage values are {}x{}, expected {n}x{}",
                eta.nrows(),
                eta.ncols(),
                system.n_stages()
            )));
        }
        if instruments.is_empty() {
            return Err(Error::Shape("at least one instrument is required".into()));
        }
        if instruments.iter().any(|k| k.nrows() != n || k.ncols() != system.n_cmrs()) {
            return Err(Error::Shape(format!(
                "instrument values must be {n}x{} per moment",
                system.n_cmrs()
            )));
        }
        Ok(Self { data, eta, instruments })
    }

    /// Held-out first-stage values for every firm, with the given instruments.
    pub fn cross_fitted(
        system: &MomentSystem,
        panel: &PanelDataset,
        eta: &CrossfitEta,
        instruments: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if eta.n_targets() != system.n_stages() {
            return Err(Error::State(format!(
                "{} first-stage targets for {} stages",
                eta.n_targets(),
                system.n_stages()
            )));
        }
        let n = panel.n_firms();
        let mut values = DMatrix::zeros(n, system.n_stages());
        for s in 0..system.n_stages() {
            for (i, v) in eta.held_out(s).into_iter().enumerate() {
                values[(i, s)] = v;
            }
        }
        Self::new(system, system.firm_data(panel)?, values, instruments)
    }

    /// The training firms of fold `l` with the fold-`l` (in-sample)
    /// first-stage values and the plug-in instruments.
    pub fn fold_plug_in(system: &MomentSystem, panel: &PanelDataset, eta: &CrossfitEta, l: usize) -> Result<Self> {
        let rows = eta.folds().complement(l);
        let mut values = DMatrix::zeros(rows.len(), system.n_stages());
        for s in 0..system.n_stages() {
            let pred = eta.fold_predictions(s, l);
            for (r, &i) in rows.iter().enumerate() {
                values[(r, s)] = pred[i];
            }
        }
        let data = system.firm_data(panel)?.select_rows(&rows);
        Self::new(system, data, values, system.plug_in_values(panel, &rows)?)
    }

    pub fn n_rows(&self) -> usize {
        self.data.n_firms()
    }

    pub fn n_moments(&self) -> usize {
        self.instruments.len()
    }

    /// Same rows and instruments with replaced first-stage values.
    pub fn with_eta(&self, eta: DMatrix<f64>) -> Result<Self> {
        if eta.shape() != self.eta.shape() {
            return Err(Error::Shape("replacement first-stage values change shape".into()));
        }
        Ok(Self {
            data: self.data.clone(),
            eta,
            instruments: self.instruments.clone(),
        })
    }
}

/// `ψ(θ)` for one row.
pub fn assemble_psi(system: &MomentSystem, md: &MomentData, row: usize, theta: &[f64]) -> DVector<f64> {
    let eta: Vec<f64> = md.eta.row(row).iter().copied().collect();
    let m = system.residuals(&md.data, row, theta, &eta);
    DVector::from_iterator(
        md.n_moments(),
        md.instruments
            .iter()
            .map(|k| m.iter().enumerate().map(|(j, v)| v * k[(row, j)]).sum::<f64>()),
    )
}

/// `rows × q` matrix of moment values; `theta(row)` picks the parameter
/// vector used for each row.
pub fn psi_matrix_with<'t>(system: &MomentSystem, md: &MomentData, theta: impl Fn(usize) -> &'t [f64]) -> DMatrix<f64> {
    let n = md.n_rows();
    let mut out = DMatrix::zeros(n, md.n_moments());
    for i in 0..n {
        out.set_row(i, &assemble_psi(system, md, i, theta(i)).transpose());
    }
    out
}

pub fn psi_matrix(system: &MomentSystem, md: &MomentData, theta: &[f64]) -> DMatrix<f64> {
    psi_matrix_with(system, md, |_| theta)
}

/// Sample mean of the moments over all rows, summed in row order.
pub fn psi_bar(system: &MomentSystem, md: &MomentData, theta: &[f64]) -> DVector<f64> {
    let mut acc = DVector::zeros(md.n_moments());
    for i in 0..md.n_rows() {
        acc += assemble_psi(system, md, i, theta);
    }
    acc / md.n_rows() as f64
}

/// Uncentered second moment `(1/n) Σ ψ_i ψ_i'`.
pub fn psi_second_moment(psi: &DMatrix<f64>) -> DMatrix<f64> {
    psi.tr_mul(psi) / psi.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::capital_only_system;

    fn tiny() -> (MomentSystem, MomentData) {
        let system = capital_only_system();
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.5, 0.2, 0.1]);
        let k = DMatrix::from_row_slice(2, 3, &[0.3, 0.4, 0.5, 1.0, 1.1, 1.2]);
        let data = FirmData { y, x: vec![k] };
        let eta = DMatrix::from_row_slice(2, 2, &[0.9, 1.8, 0.4, 0.3]);
        let inst = vec![DMatrix::from_element(2, 4, 1.0), DMatrix::zeros(2, 4)];
        let md = MomentData::new(&system, data, eta, inst).unwrap();
        (system, md)
    }

    #[test]
    fn zero_instruments_give_zero_moment() {
        let (system, md) = tiny();
        for theta in [[0.0, 1.0, 0.7], [3.0, -2.0, 0.1]] {
            assert_eq!(psi_bar(&system, &md, &theta)[1], 0.0);
        }
    }

    #[test]
    fn unit_instruments_sum_residuals() {
        let (system, md) = tiny();
        let theta = [0.1, 0.9, 0.6];
        let want: f64 = (0..2)
            .map(|i| system.residuals(&md.data, i, &theta, &[md.eta[(i, 0)], md.eta[(i, 1)]]).iter().sum::<f64>())
            .sum::<f64>()
            / 2.0;
        assert!((psi_bar(&system, &md, &theta)[0] - want).abs() < 1e-14);
    }

    #[test]
    fn shape_checks() {
        let (system, md) = tiny();
        assert!(md.with_eta(DMatrix::zeros(3, 2)).is_err());
        assert!(MomentData::new(&system, md.data.clone(), md.eta.clone(), vec![]).is_err());
    }
}
