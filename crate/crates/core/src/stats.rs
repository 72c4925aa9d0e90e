//! One-sided Wilcoxon tests and Holm's step-down adjustment.
//!
//! Both tests enumerate the exact null distribution for small samples
//! (effective size ≤ [`EXACT_CUTOFF`]) and otherwise use the normal
//! approximation with continuity correction and tie-corrected variance.
//! Tied values receive average ranks. Exact p-values count every
//! arrangement whose statistic is at least the observed one, ties included.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const EXACT_CUTOFF: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    /// Paired signed-rank test on `a − b`.
    #[default]
    SignedRank,
    /// Two-sample rank-sum test of `a` against `b`.
    RankSum,
}

impl TestMethod {
    pub fn id(&self) -> &'static str {
        match self {
            TestMethod::SignedRank => "wilcoxon_signed_rank",
            TestMethod::RankSum => "wilcoxon_rank_sum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: TestMethod,
    pub exact: bool,
}

/// Average ranks (1-based) of `v`, doubled so that they are integers, plus
/// the sizes of tie groups.
fn doubled_ranks(v: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0u64; v.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, doubled: (i + 1) + (j + 1)
        let r2 = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

fn upper_normal_p(stat: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let z = (stat - mean - 0.5) / var.sqrt();
    Normal::standard().sf(z).clamp(0.0, 1.0)
}

/// Paired test of `median(a − b) > 0`.
///
/// Zero differences are dropped; `W⁺` is the sum of ranks of `|a_i − b_i|`
/// over positive differences.
pub fn wilcoxon_signed_rank_one_sided(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "paired samples",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("signed-rank test needs at least one pair"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("signed-rank test inputs contain NaN"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            method: TestMethod::SignedRank,
            exact: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let observed: u64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let statistic = observed as f64 / 2.0;
    if n <= EXACT_CUTOFF {
        let mut count = 0u64;
        for mask in 0u32..(1u32 << n) {
            let s: u64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
            if s >= observed {
                count += 1;
            }
        }
        return Ok(TestResult {
            statistic,
            p_value: count as f64 / (1u64 << n) as f64,
            n_effective: n,
            method: TestMethod::SignedRank,
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
    Ok(TestResult {
        statistic,
        p_value: upper_normal_p(statistic, mean, var),
        n_effective: n,
        method: TestMethod::SignedRank,
        exact: false,
    })
}

/// Two-sample test that `a` is stochastically larger than `b`; the statistic
/// is the rank sum of `a` in the pooled sample.
pub fn wilcoxon_rank_sum_one_sided(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("rank-sum test needs two nonempty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("rank-sum test inputs contain NaN"));
    }
    let (n, m) = (a.len(), b.len());
    let total = n + m;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_ranks(&pooled);
    let observed: u64 = ranks[..n].iter().sum();
    let statistic = observed as f64 / 2.0;
    if total <= EXACT_CUTOFF {
        let mut count = 0u64;
        let mut all = 0u64;
        for mask in 0u32..(1u32 << total) {
            if mask.count_ones() as usize != n {
                continue;
            }
            all += 1;
            let s: u64 = (0..total).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
            if s >= observed {
                count += 1;
            }
        }
        return Ok(TestResult {
            statistic,
            p_value: count as f64 / all as f64,
            n_effective: total,
            method: TestMethod::RankSum,
            exact: true,
        });
    }
    let (nf, mf, tf) = (n as f64, m as f64, total as f64);
    let mean = nf * (tf + 1.0) / 2.0;
    let var = nf * mf / 12.0 * ((tf + 1.0) - tie_term(&ties) / (tf * (tf - 1.0)));
    Ok(TestResult {
        statistic,
        p_value: upper_normal_p(statistic, mean, var),
        n_effective: total,
        method: TestMethod::RankSum,
        exact: false,
    })
}

/// Dispatches on `method` with `a` the sample expected to be larger.
pub fn one_sided_test(method: TestMethod, a: &[f64], b: &[f64]) -> Result<TestResult> {
    match method {
        TestMethod::SignedRank => wilcoxon_signed_rank_one_sided(a, b),
        TestMethod::RankSum => wilcoxon_rank_sum_one_sided(a, b),
    }
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (j, &i) in order.iter().enumerate() {
        let adj = ((m - j) as f64 * p[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    Ok(out)
}
