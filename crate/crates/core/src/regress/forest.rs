//! Bagged regression trees.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeParams};
use crate::error::{Error, Result};
use crate::matrix::{stable_mean, Matrix};
use crate::seeds;

fn default_trees() -> usize {
    100
}

fn default_min_split() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    #[serde(default = "default_min_split")]
    pub min_samples_split: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
    /// Features inspected per split; `max(1, p / 3)` when absent.
    #[serde(default)]
    pub max_features: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: default_trees(),
            min_samples_split: default_min_split(),
            max_depth: None,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
}

impl Forest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict_row(row)).collect();
        stable_mean(&preds)
    }
}

/// Random forest: tree `k` is grown on a bootstrap sample drawn from the
/// seed derived from `(seed, k)`.
pub fn fit_forest(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<Forest> {
    let n = x.nrows();
    if n < 5 {
        return Err(Error::invalid(format!("forest needs at least 5 rows, got {n}")));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    crate::error::check_dim("response length", n, y.len())?;
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("forest inputs must be finite"));
    }
    let p = x.ncols();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        min_samples_leaf: 1,
        max_features: Some(params.max_features.unwrap_or((p / 3).max(1))),
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeds::rng(seeds::derive(params.seed, k as u64));
            let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            RegressionTree::fit(x, y, &boot, &tree_params, &mut rng)
        })
        .collect();
    Ok(Forest {
        n_features: p,
        trees,
    })
}
