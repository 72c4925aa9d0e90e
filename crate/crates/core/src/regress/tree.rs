//! CART regression trees with variance-reduction splits.
//!
//! Trees are stored as flat node tables so they serialize as plain arrays.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::{stable_mean, Matrix};

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Split feature, or `u32::MAX` for a leaf.
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Mean target of the training rows that reached the node.
    pub value: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features inspected per split; `None` inspects all.
    pub max_features: Option<usize>,
}

impl RegressionTree {
    /// Grows a tree on the rows `idx` of `x` (duplicates allowed, as in a
    /// bootstrap sample). `rng` drives feature subsampling only.
    pub fn fit(x: &Matrix, y: &[f64], idx: &[usize], params: &TreeParams, rng: &mut ChaCha8Rng) -> Self {
        let mut builder = Builder {
            x,
            y,
            params,
            nodes: Vec::new(),
            features: (0..x.ncols()).collect(),
            order: Vec::with_capacity(idx.len()),
        };
        let mut idx = idx.to_vec();
        builder.grow(&mut idx, 0, rng);
        RegressionTree {
            nodes: builder.nodes,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0usize;
        loop {
            let node = &self.nodes[k];
            if node.is_leaf() {
                return node.value;
            }
            k = if row[node.feature as usize] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, k: usize) -> usize {
            let n = &t.nodes[k];
            if n.is_leaf() {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    features: Vec<usize>,
    order: Vec<(f64, f64)>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let values: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        let value = stable_mean(&values);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            feature: LEAF,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            value,
        });
        let pure = values.iter().all(|v| *v == values[0]);
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || idx.len() < self.params.min_samples_split.max(2) {
            return id;
        }
        let Some(split) = self.best_split(idx, rng) else {
            return id;
        };
        let mid = partition(idx, |i| self.x.get(i, split.feature) <= split.threshold);
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        let node = &mut self.nodes[id as usize];
        node.feature = split.feature as u32;
        node.threshold = split.threshold;
        node.left = left;
        node.right = right;
        id
    }

    /// Inspects features in a random order until at least `max_features`
    /// have been examined and one valid split exists.
    fn best_split(&mut self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<Split> {
        let p = self.features.len();
        let budget = self.params.max_features.unwrap_or(p).clamp(1, p);
        if budget < p {
            self.features.shuffle(rng);
        }
        let n = idx.len() as f64;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let base = total * total / n;
        let scale: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<Split> = None;
        for k in 0..p {
            if k >= budget && best.is_some() {
                break;
            }
            let f = self.features[k];
            self.order.clear();
            self.order
                .extend(idx.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            self.order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let m = self.order.len();
            let mut left_sum = 0.0;
            for s in 0..m - 1 {
                left_sum += self.order[s].1;
                let nl = s + 1;
                if nl < min_leaf || m - nl < min_leaf {
                    continue;
                }
                let (xa, xb) = (self.order[s].0, self.order[s + 1].0);
                if xa == xb {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl as f64
                    + right_sum * right_sum / (m - nl) as f64
                    - base;
                if score > 1e-12 * scale && best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = 0.5 * (xa + xb);
                    if threshold >= xb {
                        threshold = xa;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

/// Stable in-place partition; returns the count satisfying `pred`.
fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (yes, no): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| pred(i));
    let k = yes.len();
    idx[..k].copy_from_slice(&yes);
    idx[k..].copy_from_slice(&no);
    k
}
