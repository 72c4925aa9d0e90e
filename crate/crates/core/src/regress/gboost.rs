//! Stagewise least-squares gradient boosting of shallow trees.

use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeParams};
use crate::error::{Error, Result};
use crate::matrix::{stable_mean, Matrix};
use crate::seeds;

fn default_rounds() -> usize {
    100
}

fn default_rate() -> f64 {
    0.1
}

fn default_depth() -> usize {
    5
}

fn default_min_split() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GBoostParams {
    #[serde(default = "default_rounds")]
    pub n_rounds: usize,
    #[serde(default = "default_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_split")]
    pub min_samples_split: usize,
}

impl Default for GBoostParams {
    fn default() -> Self {
        GBoostParams {
            n_rounds: default_rounds(),
            learning_rate: default_rate(),
            max_depth: default_depth(),
            min_samples_split: default_min_split(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBoost {
    pub n_features: usize,
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    /// Training MSE after the initial constant and after each round.
    pub train_loss: Vec<f64>,
}

impl GBoost {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.init, |acc, t| acc + self.learning_rate * t.predict_row(row))
    }
}

pub fn fit_gboost(x: &Matrix, y: &[f64], params: &GBoostParams) -> Result<GBoost> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("boosting needs at least 2 rows, got {n}")));
    }
    crate::error::check_dim("response length", n, y.len())?;
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("boosting inputs must be finite"));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::invalid("learning rate must be in (0, 1]"));
    }
    let tree_params = TreeParams {
        max_depth: Some(params.max_depth),
        min_samples_split: params.min_samples_split,
        min_samples_leaf: 1,
        max_features: None,
    };
    let init = stable_mean(y);
    let mut pred = vec![init; n];
    let loss = |pred: &[f64]| crate::matrix::mean_squared_error(pred, y);
    let mut train_loss = vec![loss(&pred)];
    let idx: Vec<usize> = (0..n).collect();
    // Feature order is fixed when every feature is inspected; the generator is
    // never drawn from.
    let mut rng = seeds::rng(0);
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let tree = RegressionTree::fit(x, &resid, &idx, &tree_params, &mut rng);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict_row(x.row(i));
        }
        train_loss.push(loss(&pred));
        trees.push(tree);
    }
    Ok(GBoost {
        n_features: x.ncols(),
        init,
        learning_rate: params.learning_rate,
        trees,
        train_loss,
    })
}
