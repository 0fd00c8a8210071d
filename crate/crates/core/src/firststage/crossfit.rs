//! Cross-fitted first-stage predictions: for every fold, a model fitted on
//! the firms outside the fold, evaluated on every firm.

use rayon::prelude::*;

use super::{fit_regressor, FittedRegressor, RegressorSpec};
use crate::data::{FoldPlan, PanelDataset};
use crate::error::{Error, Result};
use crate::seeding;

/// One conditional expectation to learn: a response `(variable, period)`
/// regressed on a list of `(variable, period)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaTarget {
    pub response: (String, usize),
    pub conditioning: Vec<(String, usize)>,
}

impl EtaTarget {
    pub fn new(response: (&str, usize), conditioning: &[(&str, usize)]) -> Self {
        Self {
            response: (response.0.to_string(), response.1),
            conditioning: conditioning.iter().map(|&(v, t)| (v.to_string(), t)).collect(),
        }
    }

    fn columns(&self) -> Vec<(&str, usize)> {
        self.conditioning.iter().map(|(v, t)| (v.as_str(), *t)).collect()
    }
}

/// Per-target, per-fold first-stage fits and their predictions for all firms.
#[derive(Debug, Clone)]
pub struct CrossfitEta {
    targets: Vec<EtaTarget>,
    folds: FoldPlan,
    models: Option<Vec<Vec<FittedRegressor>>>,
    predictions: Vec<Vec<Vec<f64>>>,
}

impl CrossfitEta {
    /// Wraps precomputed predictions (`[target][fold][firm]`), e.g. a known
    /// conditional expectation or a perturbed copy of fitted values.
    pub fn from_predictions(targets: Vec<EtaTarget>, folds: FoldPlan, predictions: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if predictions.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} prediction sets for {} targets",
                predictions.len(),
                targets.len()
            )));
        }
        for per_fold in &predictions {
            if per_fold.len() != folds.n_folds() || per_fold.iter().any(|p| p.len() != folds.n_firms()) {
                return Err(Error::Shape("predictions must be [target][fold][firm]".into()));
            }
        }
        Ok(Self {
            targets,
            folds,
            models: None,
            predictions,
        })
    }

    pub fn targets(&self) -> &[EtaTarget] {
        &self.targets
    }

    pub fn folds(&self) -> &FoldPlan {
        &self.folds
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    /// Model for `target` fitted without fold `l`, if fits were run.
    pub fn model(&self, target: usize, l: usize) -> Option<&FittedRegressor> {
        self.models.as_ref().map(|m| &m[target][l])
    }

    /// Predictions of the fold-`l` model for every firm.
    pub fn fold_predictions(&self, target: usize, l: usize) -> &[f64] {
        &self.predictions[target][l]
    }

    /// Held-out prediction for each firm, from the model that excluded it.
    pub fn held_out(&self, target: usize) -> Vec<f64> {
        (0..self.folds.n_firms())
            .map(|i| self.predictions[target][self.folds.fold_of(i)][i])
            .collect()
    }

    /// Copy with every prediction shifted by `shift(target, firm)`.
    pub fn shifted(&self, shift: impl Fn(usize, usize) -> f64) -> Self {
        let predictions = self
            .predictions
            .iter()
            .enumerate()
            .map(|(t, per_fold)| {
                per_fold
                    .iter()
                    .map(|p| p.iter().enumerate().map(|(i, v)| v + shift(t, i)).collect())
                    .collect()
            })
            .collect();
        Self {
            targets: self.targets.clone(),
            folds: self.folds.clone(),
            models: None,
            predictions,
        }
    }
}

/// Fits every `(target, fold)` pair on the fold's complement and predicts all
/// firms. Fits run in parallel; each is seeded from `(seed, target, fold)`.
pub fn crossfit_eta(
    panel: &PanelDataset,
    folds: &FoldPlan,
    spec: &RegressorSpec,
    targets: &[EtaTarget],
    seed: u64,
) -> Result<CrossfitEta> {
    if folds.n_firms() != panel.n_firms() {
        return Err(Error::Shape(format!(
            "fold plan covers {} firms, panel has {}",
            folds.n_firms(),
            panel.n_firms()
        )));
    }
    let all: Vec<usize> = (0..panel.n_firms()).collect();
    let mut inputs = Vec::with_capacity(targets.len());
    for target in targets {
        let x = panel.columns(&target.columns(), &all)?;
        let y = panel.columns(&[(target.response.0.as_str(), target.response.1)], &all)?;
        inputs.push((x, y.column(0).iter().copied().collect::<Vec<f64>>()));
    }
    let jobs: Vec<(usize, usize)> = (0..targets.len())
        .flat_map(|t| (0..folds.n_folds()).map(move |l| (t, l)))
        .collect();
    let fitted: Vec<Result<(FittedRegressor, Vec<f64>)>> = jobs
        .par_iter()
        .map(|&(t, l)| {
            let train = folds.complement(l);
            if train.len() < spec.min_rows() {
                return Err(Error::Fit(format!(
                    "fold {l} leaves {} training firms, {} needs at least {}",
                    train.len(),
                    spec.name(),
                    spec.min_rows()
                )));
            }
            let (x, y) = &inputs[t];
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = fit_regressor(spec, &xt, &yt, seeding::derive_seed(seed, &[t as u64, l as u64]))
                .map_err(|e| e.context(format!("first stage for target {t}, fold {l}")))?;
            let pred = model.predict(x)?;
            Ok((model, pred))
        })
        .collect();
    let mut models = vec![Vec::with_capacity(folds.n_folds()); targets.len()];
    let mut predictions = vec![Vec::with_capacity(folds.n_folds()); targets.len()];
    for (&(t, _), result) in jobs.iter().zip(fitted) {
        let (model, pred) = result?;
        models[t].push(model);
        predictions[t].push(pred);
    }
    Ok(CrossfitEta {
        targets: targets.to_vec(),
        folds: folds.clone(),
        models: Some(models),
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_folds, vars};
    use crate::firststage::{GbtParams, RidgeParams};
    use nalgebra::DMatrix;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn panel(n: usize, seed: u64) -> PanelDataset {
        let mut rng = seeding::stream(seed, &[]);
        let k = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
        let i = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
        let y = DMatrix::from_fn(n, 3, |r, c| k[(r, c)] + (2.0 * i[(r, c)]).sin() + 0.1 * rng.random::<f64>());
        let mut v = BTreeMap::new();
        v.insert(vars::CAPITAL.to_string(), k);
        v.insert(vars::INVESTMENT.to_string(), i);
        v.insert(vars::OUTPUT.to_string(), y);
        PanelDataset::new((0..n).map(|i| i.to_string()).collect(), vec![1, 2, 3], v).unwrap()
    }

    fn targets() -> Vec<EtaTarget> {
        (0..2).map(|t| EtaTarget::new(("y", t), &[("i", t), ("k", t)])).collect()
    }

    fn small_gbt() -> RegressorSpec {
        RegressorSpec::GradientBoostedTrees(GbtParams {
            n_trees: 30,
            predict_trees: 30,
            shrinkage: 0.1,
            ..Default::default()
        })
    }

    #[test]
    fn one_model_per_target_and_fold() {
        let p = panel(120, 1);
        let folds = make_folds(120, 5, 3).unwrap();
        let eta = crossfit_eta(&p, &folds, &small_gbt(), &targets(), 7).unwrap();
        assert_eq!(eta.n_targets(), 2);
        for t in 0..2 {
            for l in 0..5 {
                assert!(eta.model(t, l).is_some());
                assert_eq!(eta.fold_predictions(t, l).len(), 120);
            }
        }
    }

    #[test]
    fn fold_model_ignores_its_own_rows() {
        let p = panel(120, 2);
        let folds = make_folds(120, 5, 3).unwrap();
        let base = crossfit_eta(&p, &folds, &small_gbt(), &targets(), 7).unwrap();
        let held = folds.fold(2);
        let mut vars_map = BTreeMap::new();
        for name in p.variable_names() {
            let mut m = p.var(name).unwrap().clone();
            for &i in &held {
                for t in 0..3 {
                    m[(i, t)] += 5.0 + i as f64;
                }
            }
            vars_map.insert(name.to_string(), m);
        }
        let changed = PanelDataset::new(p.firm_ids().to_vec(), p.periods().to_vec(), vars_map).unwrap();
        let other = crossfit_eta(&changed, &folds, &small_gbt(), &targets(), 7).unwrap();
        for t in 0..2 {
            assert_eq!(base.model(t, 2), other.model(t, 2));
            assert_ne!(base.model(t, 0), other.model(t, 0));
        }
    }

    #[test]
    fn ridge_held_out_error_approaches_noise() {
        // y = a + b·g(i, k) + noise with g in the dictionary span
        let mse_at = |n: usize| {
            let mut rng = seeding::stream(n as u64, &[]);
            let k = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
            let i = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
            let truth: Vec<f64> = (0..n).map(|r| 1.0 + (0.5 * k[(r, 0)]).exp() * (-0.3 * i[(r, 0)]).exp()).collect();
            let normal = rand_distr::Normal::new(0.0, 0.5).unwrap();
            let y = DMatrix::from_fn(n, 1, |r, _| truth[r] + rng.sample(normal));
            let mut v = BTreeMap::new();
            v.insert("k".to_string(), k);
            v.insert("i".to_string(), i);
            v.insert("y".to_string(), y);
            let p = PanelDataset::new((0..n).map(|i| i.to_string()).collect(), vec![1], v).unwrap();
            let folds = make_folds(n, 5, 1).unwrap();
            let spec = RegressorSpec::RidgeBasis(RidgeParams { ridge: 1e-6, per_variable: Some(3) });
            let eta = crossfit_eta(&p, &folds, &spec, &[EtaTarget::new(("y", 0), &[("i", 0), ("k", 0)])], 0).unwrap();
            let held = eta.held_out(0);
            held.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64
        };
        let small = mse_at(200);
        let large = mse_at(5000);
        assert!(large < small, "{large} vs {small}");
        assert!(large < 0.01 * 0.25, "estimation error {large} not small against noise variance");
    }

    #[test]
    fn too_small_fold_names_fold() {
        let p = panel(24, 3);
        let folds = make_folds(24, 2, 3).unwrap();
        let err = crossfit_eta(&p, &folds, &RegressorSpec::default(), &targets(), 0).unwrap_err();
        assert!(err.to_string().contains("fold 0"), "{err}");
    }
}
