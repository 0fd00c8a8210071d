//! Two-input (labor, capital) fixtures: noiseless recovery and derivatives.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dgmm::data::{vars, PanelDataset};
use dgmm::dgmm::{jacobian_fd, point_estimate, GmmProblem, MomentData, SearchConfig};
use dgmm::moments::{cobb_douglas_two_input_system, CmrRole, MomentSystem};
use dgmm::Error;

const TRUTH: [f64; 4] = [0.4, 0.6, 0.3, 0.7];

/// Panel whose productivity follows the AR(1) without innovations, so every
/// residual vanishes at the truth; `η_s` is the noiseless output.
fn noiseless(n: usize, periods: usize, seed: u64) -> (PanelDataset, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
    let l = DMatrix::from_fn(n, periods, |_, _| 1.0 + draw(0.5));
    let k = DMatrix::from_fn(n, periods, |_, _| 2.0 + draw(0.5));
    let mut omega = DMatrix::zeros(n, periods);
    for i in 0..n {
        omega[(i, 0)] = draw(0.3);
        for t in 1..periods {
            omega[(i, t)] = TRUTH[3] * omega[(i, t - 1)];
        }
    }
    let y = DMatrix::from_fn(n, periods, |i, t| TRUTH[0] + TRUTH[1] * l[(i, t)] + TRUTH[2] * k[(i, t)] + omega[(i, t)]);
    let e = DMatrix::from_fn(n, periods, |i, t| omega[(i, t)] + 0.2 * k[(i, t)]);
    let eta = y.columns(0, periods - 1).into_owned();
    let mut variables = BTreeMap::new();
    variables.insert(vars::OUTPUT.to_string(), y);
    variables.insert(vars::LABOR.to_string(), l);
    variables.insert(vars::CAPITAL.to_string(), k);
    variables.insert(vars::INTERMEDIATES.to_string(), e);
    let panel = PanelDataset::new(
        (0..n).map(|i| format!("f{i}")).collect(),
        (1..=periods as i64).collect(),
        variables,
    )
    .unwrap();
    (panel, eta)
}

fn menu_data(system: &MomentSystem, panel: &PanelDataset, eta: DMatrix<f64>) -> MomentData {
    let firms: Vec<usize> = (0..panel.n_firms()).collect();
    let instruments = (0..system.menu_size())
        .map(|q| system.menu_values(panel, q, &firms).unwrap())
        .collect();
    MomentData::new(system, system.firm_data(panel).unwrap(), eta, instruments).unwrap()
}

#[test]
fn noiseless_panel_recovers_every_parameter() {
    let system = cobb_douglas_two_input_system(4).unwrap();
    let (panel, eta) = noiseless(300, 4, 1);
    let md = menu_data(&system, &panel, eta);
    let theta = point_estimate(&system, &md, &SearchConfig::default()).unwrap();
    for (got, want) in theta.iter().zip(TRUTH) {
        assert!((got - want).abs() < 1e-4, "{theta:?}");
    }
}

#[test]
fn joint_search_recovers_every_parameter() {
    let system = cobb_douglas_two_input_system(3).unwrap();
    let (panel, eta) = noiseless(300, 3, 2);
    let md = menu_data(&system, &panel, eta);
    let search = SearchConfig {
        joint: true,
        start: Some(vec![0.0, 0.5, 0.5, 0.5]),
        ..SearchConfig::default()
    };
    let theta = point_estimate(&system, &md, &search).unwrap();
    for (got, want) in theta.iter().zip(TRUTH) {
        assert!((got - want).abs() < 1e-3, "{theta:?}");
    }
}

#[test]
fn input_derivatives_match_closed_form() {
    let system = cobb_douglas_two_input_system(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..20 {
        let (panel, eta) = noiseless(60, 4, 100 + seed);
        let md = menu_data(&system, &panel, eta);
        let theta = [
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..1.5),
            rng.random_range(0.0..1.5),
            rng.random_range(0.0..0.95),
        ];
        let problem = GmmProblem::new(&system, &md, true);
        let fd = jacobian_fd(|t| problem.psi_bar(t), &theta).unwrap();
        for input in 0..2 {
            // ∂m/∂θ_x = θ_ω x_s − x_{s+1} on structural rows, 0 on first-stage rows
            let x = &md.data.x[input];
            let analytic = DVector::from_fn(md.n_moments(), |q, _| {
                let mut acc = 0.0;
                for i in 0..md.n_rows() {
                    for (j, c) in system.cmrs().iter().enumerate() {
                        if c.role == CmrRole::Structural {
                            acc += md.instruments[q][(i, j)] * (theta[3] * x[(i, c.stage)] - x[(i, c.stage + 1)]);
                        }
                    }
                }
                acc / md.n_rows() as f64
            });
            let rel = (fd.column(1 + input) - &analytic).amax() / analytic.amax();
            assert!(rel < 1e-6, "input {input}: relative error {rel}");
        }
    }
}

#[test]
fn two_periods_cannot_profile() {
    let system = cobb_douglas_two_input_system(2).unwrap();
    let (panel, eta) = noiseless(50, 2, 4);
    let md = menu_data(&system, &panel, eta);
    let err = point_estimate(&system, &md, &SearchConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Profiling(_)), "{err:?}");
}

#[test]
fn two_periods_estimate_jointly() {
    let system = cobb_douglas_two_input_system(2).unwrap();
    let (panel, eta) = noiseless(300, 2, 5);
    let md = menu_data(&system, &panel, eta);
    let search = SearchConfig {
        joint: true,
        ..SearchConfig::default()
    };
    let theta = point_estimate(&system, &md, &search).unwrap();
    let problem = GmmProblem::new(&system, &md, true);
    assert!(problem.psi_bar(&theta).unwrap().amax() < 1e-6, "{theta:?}");
}
