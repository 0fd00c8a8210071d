//! Derivative-free minimizers: grid search refined by golden section in one
//! dimension, Nelder–Mead with random restarts otherwise.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// The minimizer sits on the edge of the search region.
    pub at_boundary: bool,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Golden-section search on `[a, b]` until the bracket is narrower than `tol`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = finite_or_inf(f(c));
    let mut fd = finite_or_inf(f(d));
    let mut evals = 2;
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = finite_or_inf(f(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = finite_or_inf(f(d));
        }
        evals += 1;
    }
    let x = 0.5 * (a + b);
    let fx = finite_or_inf(f(x));
    let (x, fx) = [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .fold((x, fx), |best, cand| if cand.1 < best.1 { cand } else { best });
    (x, fx, evals + 1)
}

/// Evaluates `grid` equally spaced points on `[lo, hi]`, then refines
/// between the neighbours of the best point by golden section.
pub fn grid_golden(f: impl Fn(f64) -> f64 + Sync, lo: f64, hi: f64, grid: usize, tol: f64) -> Result<Minimum> {
    if !(lo < hi) || grid < 3 {
        return Err(Error::Argument(format!("need lo < hi and at least 3 grid points, got [{lo}, {hi}] with {grid}")));
    }
    let step = (hi - lo) / (grid - 1) as f64;
    let values: Vec<f64> = (0..grid)
        .into_par_iter()
        .map(|g| finite_or_inf(f(lo + step * g as f64)))
        .collect();
    let best = (0..grid).fold(0, |b, g| if values[g] < values[b] { g } else { b });
    if !values[best].is_finite() {
        return Err(Error::Numeric(format!("objective is not finite anywhere on [{lo}, {hi}]")));
    }
    let a = lo + step * best.saturating_sub(1) as f64;
    let b = lo + step * (best + 1).min(grid - 1) as f64;
    let (x, fx, evals) = golden_section(&f, a, b, tol);
    let (x, fx) = if fx <= values[best] { (x, fx) } else { (lo + step * best as f64, values[best]) };
    let at_boundary = best == 0 || best == grid - 1 || x - lo <= tol || hi - x <= tol;
    Ok(Minimum {
        x: vec![x],
        value: fx,
        evaluations: grid + evals,
        at_boundary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Edge length of the initial simplex along each axis.
    pub step: f64,
    /// Stop when every vertex is within `xtol` of the best one and the
    /// value spread is below `ftol`.
    pub xtol: f64,
    pub ftol: f64,
    pub max_iterations: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            step: 0.1,
            xtol: 1e-8,
            ftol: 1e-12,
            max_iterations: 5000,
        }
    }
}

/// Standard Nelder–Mead (reflection 1, expansion 2, contraction ½, shrink ½).
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], options: &NelderMeadOptions) -> Minimum {
    let d = start.len();
    let eval = |x: &[f64]| finite_or_inf(f(x));
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for k in 0..d {
        let mut v = start.to_vec();
        v[k] += options.step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut evaluations = d + 1;
    for _ in 0..options.max_iterations {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread_f = values[d] - values[0];
        if spread_x <= options.xtol && (spread_f <= options.ftol || !spread_f.is_finite() && spread_x == 0.0) {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|k| simplex[..d].iter().map(|v| v[k]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|k| centroid[k] + t * (simplex[d][k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = eval(&xr);
        evaluations += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            evaluations += 1;
            if fe < fr {
                simplex[d] = xe;
                values[d] = fe;
            } else {
                simplex[d] = xr;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = xr;
            values[d] = fr;
        } else {
            let (xc, fc) = if fr < values[d] {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            };
            evaluations += 1;
            if fc < values[d].min(fr) {
                simplex[d] = xc;
                values[d] = fc;
            } else {
                for i in 1..=d {
                    simplex[i] = (0..d).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
                    values[i] = eval(&simplex[i]);
                }
                evaluations += d;
            }
        }
    }
    let best = (0..=d).fold(0, |b, i| if values[i] < values[b] { i } else { b });
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evaluations,
        at_boundary: false,
    }
}

/// Nelder–Mead from `start` plus `restarts` runs from uniformly perturbed
/// starts (`±spread` per coordinate); the lowest value wins, earlier runs
/// on ties.
pub fn nelder_mead_restarts(
    f: impl Fn(&[f64]) -> f64 + Sync,
    start: &[f64],
    restarts: usize,
    spread: f64,
    seed: u64,
    options: &NelderMeadOptions,
) -> Result<Minimum> {
    let mut rng = seeding::stream(seed, &[]);
    let mut starts = vec![start.to_vec()];
    for _ in 0..restarts {
        starts.push(start.iter().map(|v| v + spread * (2.0 * rng.random::<f64>() - 1.0)).collect());
    }
    let runs: Vec<Minimum> = starts.par_iter().map(|s| nelder_mead(&f, s, options)).collect();
    let evaluations = runs.iter().map(|r| r.evaluations).sum();
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .expect("at least one run");
    if !best.value.is_finite() {
        return Err(Error::Numeric("objective is not finite at any simplex vertex".into()));
    }
    best.evaluations = evaluations;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_quadratic_minimum() {
        let m = grid_golden(|x| (x - 1.234567).powi(2) + 3.0, 0.0, 2.0, 101, 1e-8).unwrap();
        assert!((m.x[0] - 1.234567).abs() < 1e-6);
        assert!(!m.at_boundary);
    }

    #[test]
    fn boundary_minimum_is_flagged() {
        let m = grid_golden(|x| x, 0.0, 2.0, 101, 1e-8).unwrap();
        assert!(m.at_boundary && m.x[0] < 1e-6);
    }

    #[test]
    fn nowhere_finite_is_error() {
        assert!(grid_golden(|_| f64::NAN, 0.0, 1.0, 11, 1e-8).is_err());
    }

    #[test]
    fn nelder_mead_on_rosenbrock_and_quadratic() {
        let quad = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.7).powi(2) + 0.5 * (x[0] - 0.3) * (x[1] + 0.7);
        let m = nelder_mead_restarts(quad, &[1.0, 1.0], 3, 0.5, 9, &NelderMeadOptions::default()).unwrap();
        assert!((m.x[0] - 0.3).abs() < 1e-6 && (m.x[1] + 0.7).abs() < 1e-6);
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(rosen, &[-1.2, 1.0], &NelderMeadOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn restarts_are_deterministic() {
        let f = |x: &[f64]| (x[0] * 3.0).sin() + x[0] * x[0] + (x[1] - 0.2).powi(2);
        let o = NelderMeadOptions::default();
        assert_eq!(
            nelder_mead_restarts(f, &[0.5, 0.5], 3, 0.5, 4, &o).unwrap(),
            nelder_mead_restarts(f, &[0.5, 0.5], 3, 0.5, 4, &o).unwrap()
        );
    }
}
