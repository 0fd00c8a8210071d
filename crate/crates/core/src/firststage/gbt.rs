//! Stochastic gradient boosting of small regression trees under squared
//! error loss.
//!
//! Trees are grown best-first: starting from a single leaf, the terminal node
//! whose best split most reduces the squared error is split, up to
//! `interaction_depth` splits. Split search is exact over sorted unique
//! values; ties go to the lower feature and then the lower threshold.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    /// Boosting iterations grown.
    pub n_trees: usize,
    /// Number of splits per tree.
    pub interaction_depth: usize,
    /// Minimum observations in each child of a split.
    pub min_node_size: usize,
    pub shrinkage: f64,
    /// Share of the training rows drawn (without replacement) for each tree.
    pub bag_fraction: f64,
    /// Share of the shuffled rows used for training; the rest only feeds the
    /// validation loss trace.
    pub train_fraction: f64,
    /// Trees used for prediction.
    pub predict_trees: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 2000,
            interaction_depth: 3,
            min_node_size: 10,
            shrinkage: 0.001,
            bag_fraction: 0.5,
            train_fraction: 0.5,
            predict_trees: 500,
        }
    }
}

impl GbtParams {
    /// Same model output with no trees grown past the prediction cap. Trees
    /// are grown sequentially from one RNG stream, so the first
    /// `predict_trees` are identical either way.
    pub fn trimmed(mut self) -> Self {
        self.n_trees = self.n_trees.min(self.predict_trees);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.predict_trees == 0 {
            return Err(Error::Argument("boosting needs at least one tree".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Argument(format!("shrinkage {} outside (0, 1]", self.shrinkage)));
        }
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return Err(Error::Argument(format!("bag fraction {} outside (0, 1]", self.bag_fraction)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "train fraction {} outside (0, 1]",
                self.train_fraction
            )));
        }
        if self.min_node_size == 0 {
            return Err(Error::Argument("minimum node size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[(row, feature)] <= threshold { left } else { right },
            }
        }
    }

    /// Number of internal splits.
    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

/// A fitted boosting model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    init: f64,
    shrinkage: f64,
    predict_trees: usize,
    n_features: usize,
    trees: Vec<Tree>,
    train_loss: Vec<f64>,
    valid_loss: Vec<f64>,
}

impl GbtModel {
    /// Predictions from the first `predict_trees` trees.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.predict_with(x, self.predict_trees)
    }

    /// Predictions from the first `n_trees` trees.
    pub fn predict_with(&self, x: &DMatrix<f64>, n_trees: usize) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Shape(format!(
                "model fitted on {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let used = &self.trees[..n_trees.min(self.trees.len())];
        Ok((0..x.nrows())
            .map(|r| self.init + self.shrinkage * used.iter().map(|t| t.predict_row(x, r)).sum::<f64>())
            .collect())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Mean squared error on the training rows after each tree.
    pub fn train_loss(&self) -> &[f64] {
        &self.train_loss
    }

    /// Mean squared error on the validation rows after each tree (empty
    /// when everything was used for training).
    pub fn valid_loss(&self) -> &[f64] {
        &self.valid_loss
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Best split of a node whose rows are given per feature in ascending
/// feature order.
fn best_split(x: &DMatrix<f64>, resid: &[f64], sorted: &[Vec<usize>], min_node: usize) -> Option<Candidate> {
    let n = sorted[0].len();
    if n < 2 * min_node {
        return None;
    }
    let total: f64 = sorted[0].iter().map(|&r| resid[r]).sum();
    let base = total * total / n as f64;
    let mut best: Option<Candidate> = None;
    for (f, rows) in sorted.iter().enumerate() {
        let mut left = 0.0;
        for i in 0..n - 1 {
            left += resid[rows[i]];
            let n_left = i + 1;
            if n_left < min_node {
                continue;
            }
            if n - n_left < min_node {
                break;
            }
            let (lo, hi) = (x[(rows[i], f)], x[(rows[i + 1], f)]);
            if lo >= hi {
                continue;
            }
            let right = total - left;
            let gain = left * left / n_left as f64 + right * right / (n - n_left) as f64 - base;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mut threshold = 0.5 * (lo + hi);
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Candidate {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > 0.0)
}

fn grow_tree(
    x: &DMatrix<f64>,
    resid: &[f64],
    root: Vec<Vec<usize>>,
    depth: usize,
    min_node: usize,
) -> Tree {
    struct Open {
        node: usize,
        rows: Vec<Vec<usize>>,
        split: Option<Candidate>,
    }
    let mean = |rows: &[usize]| rows.iter().map(|&r| resid[r]).sum::<f64>() / rows.len().max(1) as f64;
    let mut nodes = vec![Node::Leaf(mean(&root[0]))];
    let split = best_split(x, resid, &root, min_node);
    let mut open = vec![Open {
        node: 0,
        rows: root,
        split,
    }];
    for _ in 0..depth {
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(k, o)| o.split.as_ref().map(|s| (k, s.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (k, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((k, g)),
            });
        let Some((k, _)) = pick else { break };
        let Open { node, rows, split } = open.remove(k);
        let split = split.expect("picked node has a split");
        let goes_left = |r: usize| x[(r, split.feature)] <= split.threshold;
        let (mut left_rows, mut right_rows) = (Vec::with_capacity(rows.len()), Vec::with_capacity(rows.len()));
        for list in rows {
            let (l, r): (Vec<usize>, Vec<usize>) = list.into_iter().partition(|&r| goes_left(r));
            left_rows.push(l);
            right_rows.push(r);
        }
        let left = nodes.len();
        nodes.push(Node::Leaf(mean(&left_rows[0])));
        nodes.push(Node::Leaf(mean(&right_rows[0])));
        nodes[node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right: left + 1,
        };
        for (child, child_rows) in [(left, left_rows), (left + 1, right_rows)] {
            let split = best_split(x, resid, &child_rows, min_node);
            open.push(Open {
                node: child,
                rows: child_rows,
                split,
            });
        }
    }
    Tree { nodes }
}

fn mse(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len().max(1) as f64
}

/// Fits a boosting model to `(x, y)`; deterministic in `seed`.
pub fn fit_gbt(x: &DMatrix<f64>, y: &[f64], params: &GbtParams, seed: u64) -> Result<GbtModel> {
    params.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows of features, {} responses", x.nrows(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite boosting input".into()));
    }
    let n = y.len();
    let n_train = ((params.train_fraction * n as f64).floor() as usize).min(n);
    if n_train < 2 * params.min_node_size {
        return Err(Error::Fit(format!(
            "boosting needs at least {} training rows, got {n_train}",
            2 * params.min_node_size
        )));
    }
    let mut rng = seeding::stream(seed, &[0]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (train, valid) = order.split_at(n_train);
    let xt = x.select_rows(train);
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let xv = x.select_rows(valid);
    let yv: Vec<f64> = valid.iter().map(|&i| y[i]).collect();

    let p = x.ncols();
    let presorted: Vec<Vec<usize>> = (0..p)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n_train).collect();
            idx.sort_by(|&a, &b| xt[(a, f)].total_cmp(&xt[(b, f)]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let init = yt.iter().sum::<f64>() / n_train as f64;
    let mut ft = vec![init; n_train];
    let mut fv = vec![init; yv.len()];
    let n_bag = ((params.bag_fraction * n_train as f64).floor() as usize).max(1);
    let mut resid = vec![0.0; n_train];
    let mut in_bag = vec![false; n_train];
    let mut rows: Vec<usize> = (0..n_train).collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut train_loss = Vec::with_capacity(params.n_trees);
    let mut valid_loss = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..n_train {
            resid[i] = yt[i] - ft[i];
        }
        in_bag.iter_mut().for_each(|b| *b = false);
        let (bag, _) = rows.partial_shuffle(&mut rng, n_bag);
        for &r in bag.iter() {
            in_bag[r] = true;
        }
        let root: Vec<Vec<usize>> = presorted
            .iter()
            .map(|list| list.iter().copied().filter(|&r| in_bag[r]).collect())
            .collect();
        let tree = grow_tree(&xt, &resid, root, params.interaction_depth, params.min_node_size);
        for (i, f) in ft.iter_mut().enumerate() {
            *f += params.shrinkage * tree.predict_row(&xt, i);
        }
        for (i, f) in fv.iter_mut().enumerate() {
            *f += params.shrinkage * tree.predict_row(&xv, i);
        }
        train_loss.push(mse(&yt, &ft));
        if !yv.is_empty() {
            valid_loss.push(mse(&yv, &fv));
        }
        trees.push(tree);
    }
    Ok(GbtModel {
        init,
        shrinkage: params.shrinkage,
        predict_trees: params.predict_trees,
        n_features: p,
        trees,
        train_loss,
        valid_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noisy_data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = seeding::stream(seed, &[]);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
        let y = (0..n).map(|i| (3.0 * x[(i, 0)]).sin() + x[(i, 1)] + 0.1 * rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn constant_response_predicts_constant() {
        let (x, _) = noisy_data(100, 1);
        let y = vec![2.5; 100];
        let m = fit_gbt(&x, &y, &GbtParams { n_trees: 50, predict_trees: 50, ..Default::default() }, 3).unwrap();
        assert!(m.predict(&x).unwrap().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    /// Best single split by brute force over every midpoint.
    fn exhaustive_stump(x: &[f64], y: &[f64]) -> (f64, f64) {
        let mut values: Vec<f64> = x.to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut best = (f64::INFINITY, f64::NAN);
        for w in values.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let l: Vec<f64> = x.iter().zip(y).filter(|(a, _)| **a <= t).map(|(_, b)| *b).collect();
            let r: Vec<f64> = x.iter().zip(y).filter(|(a, _)| **a > t).map(|(_, b)| *b).collect();
            let sse = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|a| (a - m).powi(2)).sum::<f64>()
            };
            let s = sse(&l) + sse(&r);
            if s < best.0 {
                best = (s, t);
            }
        }
        best
    }

    #[test]
    fn step_function_is_learned_at_oracle_threshold() {
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).fract()).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v > 0.42 { 3.0 } else { -1.0 }).collect();
        let x = DMatrix::from_fn(n, 1, |i, _| xs[i]);
        let params = GbtParams {
            n_trees: 400,
            predict_trees: 400,
            interaction_depth: 1,
            shrinkage: 0.1,
            bag_fraction: 1.0,
            train_fraction: 1.0,
            ..Default::default()
        };
        let m = fit_gbt(&x, &y, &params, 5).unwrap();
        let (_, oracle_t) = exhaustive_stump(&xs, &y);
        match m.trees()[0].nodes[0] {
            Node::Split { threshold, .. } => assert!((threshold - oracle_t).abs() < 1e-12),
            _ => panic!("first tree did not split"),
        }
        let pred = m.predict(&x).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mse(&y, &pred) < 0.01 * var);
    }

    #[test]
    fn same_seed_same_model() {
        let (x, y) = noisy_data(120, 2);
        let p = GbtParams { n_trees: 60, predict_trees: 60, ..Default::default() };
        assert_eq!(fit_gbt(&x, &y, &p, 9).unwrap(), fit_gbt(&x, &y, &p, 9).unwrap());
        assert_ne!(fit_gbt(&x, &y, &p, 9).unwrap(), fit_gbt(&x, &y, &p, 10).unwrap());
    }

    #[test]
    fn full_bag_training_loss_never_increases() {
        let (x, y) = noisy_data(150, 4);
        let p = GbtParams {
            n_trees: 200,
            predict_trees: 200,
            shrinkage: 0.05,
            bag_fraction: 1.0,
            ..Default::default()
        };
        let m = fit_gbt(&x, &y, &p, 1).unwrap();
        assert!(m.train_loss().windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert_eq!(m.valid_loss().len(), 200);
    }

    #[test]
    fn trimming_keeps_predictions() {
        let (x, y) = noisy_data(100, 6);
        let full = GbtParams { n_trees: 80, predict_trees: 30, ..Default::default() };
        let a = fit_gbt(&x, &y, &full, 2).unwrap();
        let b = fit_gbt(&x, &y, &full.trimmed(), 2).unwrap();
        assert_eq!(b.n_trees(), 30);
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn trees_respect_split_budget() {
        let (x, y) = noisy_data(200, 8);
        let m = fit_gbt(&x, &y, &GbtParams { n_trees: 20, predict_trees: 20, ..Default::default() }, 0).unwrap();
        assert!(m.trees().iter().all(|t| t.n_splits() <= 3));
        assert!(m.trees().iter().any(|t| t.n_splits() == 3));
    }

    #[test]
    fn too_few_rows_is_fit_error() {
        let (x, y) = noisy_data(30, 1);
        assert!(matches!(fit_gbt(&x, &y, &GbtParams::default(), 0), Err(Error::Fit(_))));
    }
}
