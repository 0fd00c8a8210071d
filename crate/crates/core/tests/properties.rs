use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dgmm::data::make_folds;
use dgmm::dgmm::{psi_bar, MomentData};
use dgmm::montecarlo::histogram_export;
use dgmm::moments::capital_only_system;
use dgmm::oriv::{coordinate_descent, soft_threshold, CdOptions, LassoProblem, KKT_TOL};

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn stacked_problem(seed: u64, equations: usize, rows: usize, width: usize) -> LassoProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<_> = (0..equations).map(|_| normal_matrix(&mut rng, rows, width)).collect();
    let f: Vec<_> = (0..equations).map(|_| normal_matrix(&mut rng, rows, 1).column(0).into_owned()).collect();
    LassoProblem::from_design(&m, &f).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn soft_threshold_beats_a_grid(a in -5.0f64..5.0, b in 0.1f64..4.0, t in 0.0f64..3.0) {
        let cost = |x: f64| 0.5 * b * x * x - a * x + t * x.abs();
        let x = soft_threshold(a, b, t);
        let grid_best = (-4000..=4000).map(|i| cost(i as f64 * 0.01)).fold(f64::INFINITY, f64::min);
        prop_assert!(cost(x) <= grid_best + 1e-12);
    }

    #[test]
    fn solver_certifies_with_monotone_trace(
        seed in any::<u64>(),
        equations in 1usize..=4,
        rows in 5usize..60,
        width in 1usize..=50,
        log_lambda in -4.0f64..0.5,
    ) {
        let p = stacked_problem(seed, equations, rows, width);
        let d = DVector::from_element(width, 1.0);
        let lambda = 10f64.powf(log_lambda);
        let s = coordinate_descent(&p, &DVector::zeros(width), &d, lambda, &CdOptions::default()).unwrap();
        prop_assert!(p.kkt_violation(&s.beta, &d, lambda) <= KKT_TOL);
        prop_assert!(s.trace.windows(2).all(|w| w[1] <= w[0] + p.rounding_slack()));
        prop_assert!((s.objective - p.objective(&s.beta, &d, lambda)).abs() <= p.rounding_slack());
    }

    #[test]
    fn zero_penalty_is_least_squares(seed in any::<u64>(), equations in 1usize..=3, width in 1usize..8) {
        let p = stacked_problem(seed, equations, 40, width);
        let d = DVector::from_element(width, 1.0);
        let s = coordinate_descent(&p, &DVector::zeros(width), &d, 0.0, &CdOptions::default()).unwrap();
        let ls = p.h2().clone().cholesky().unwrap().solve(p.h1());
        prop_assert!((s.beta - ls).amax() <= 1e-6);
    }

    #[test]
    fn folds_partition_evenly(n in 2usize..300, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let plan = make_folds(n, k, seed).unwrap();
        let mut sizes = vec![0usize; k];
        for i in 0..n {
            sizes[plan.fold_of(i)] += 1;
        }
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        for l in 0..k {
            prop_assert_eq!(plan.complement(l).len(), n - sizes[l]);
        }
    }

    #[test]
    fn histogram_keeps_every_estimate(values in proptest::collection::vec(-10.0f64..10.0, 2..200), bins in 1usize..40) {
        prop_assume!(values.iter().any(|v| *v != values[0]));
        let h = histogram_export(&values, 0.0, bins).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), values.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
    }

    /// With the instruments held fixed the moments are affine in the first
    /// stage, so difference quotients do not depend on the step.
    #[test]
    fn moments_are_affine_in_first_stage(seed in any::<u64>(), tau in 0.001f64..1.0) {
        let system = capital_only_system();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let sim = dgmm::montecarlo::simulate_dgp(&Default::default(), n, seed % 1000).unwrap();
        let data = system.firm_data(&sim.panel).unwrap();
        let eta = normal_matrix(&mut rng, n, system.n_stages());
        let instruments = (0..3).map(|_| normal_matrix(&mut rng, n, system.n_cmrs())).collect();
        let md = MomentData::new(&system, data, eta.clone(), instruments).unwrap();
        let b = normal_matrix(&mut rng, n, system.n_stages());
        let theta = [0.1, 0.9, 0.6];
        let base = psi_bar(&system, &md, &theta);
        let quotient = |t: f64| (psi_bar(&system, &md.with_eta(&eta + &b * t).unwrap(), &theta) - &base) / t;
        let (full, half) = (quotient(tau), quotient(tau / 2.0));
        prop_assert!((full - half).amax() <= 1e-9 * (1.0 + base.amax() / tau));
    }
}
