//! Linear models on internally standardized columns: OLS, ridge, and lasso
//! by cyclic coordinate descent, plus k-fold cross-validation over a λ grid.
//!
//! The lasso objective is
//!
//! ```text
//! (1 / 2n) Σ (y_i − θ₀ − θᵀ x_i)² + λ ‖θ‖₁
//! ```
//!
//! evaluated on columns scaled to mean 0 and (population) variance 1.
//! Constant columns are dropped and keep a zero coefficient. Reported
//! coefficients are mapped back to the raw scale.

use serde::{Deserialize, Serialize};

use crate::dataset::shuffled_indices;
use crate::error::{Error, Result};
use crate::matrix::{solve_spd, stable_mean, Matrix};

pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

/// `sign(ρ) · max(|ρ| − λ, 0)`
pub fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    /// Raw-scale coefficients.
    pub coef: Vec<f64>,
    /// Coefficients on the standardized scale; defines the sparsity pattern.
    pub std_coef: Vec<f64>,
    pub x_mean: Vec<f64>,
    /// Column scales; 0 marks a dropped constant column.
    pub x_scale: Vec<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub sweeps: usize,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.coef.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    /// Number of nonzero coefficients.
    pub fn nnz(&self) -> usize {
        self.std_coef.iter().filter(|c| **c != 0.0).count()
    }
}

/// Column-major standardized copy of a design matrix.
struct Standardized {
    n: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Indices of non-constant columns.
    active: Vec<usize>,
    /// Standardized non-constant columns, aligned with `active`.
    cols: Vec<Vec<f64>>,
    y_mean: f64,
    y_centered: Vec<f64>,
}

impl Standardized {
    fn new(x: &Matrix, y: &[f64]) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::invalid(format!("linear fit needs n >= 2, got {n}")));
        }
        crate::error::check_dim("response length", n, y.len())?;
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("linear fit inputs must be finite"));
        }
        let p = x.ncols();
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        let mut active = Vec::new();
        let mut cols = Vec::new();
        for j in 0..p {
            let c = x.column(j);
            let m = stable_mean(&c);
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            mean[j] = m;
            if s > 1e-10 * (1.0 + m.abs()) {
                scale[j] = s;
                active.push(j);
                cols.push(c.iter().map(|v| (v - m) / s).collect());
            }
        }
        let y_mean = stable_mean(y);
        Ok(Standardized {
            n,
            mean,
            scale,
            active,
            cols,
            y_mean,
            y_centered: y.iter().map(|v| v - y_mean).collect(),
        })
    }

    fn model(&self, beta_active: &[f64], lambda: Option<f64>, sweeps: usize) -> LinearModel {
        let p = self.mean.len();
        let mut std_coef = vec![0.0; p];
        let mut coef = vec![0.0; p];
        for (k, &j) in self.active.iter().enumerate() {
            std_coef[j] = beta_active[k];
            coef[j] = beta_active[k] / self.scale[j];
        }
        let intercept = self.y_mean
            - coef
                .iter()
                .zip(&self.mean)
                .map(|(c, m)| c * m)
                .sum::<f64>();
        LinearModel {
            intercept,
            coef,
            std_coef,
            x_mean: self.mean.clone(),
            x_scale: self.scale.clone(),
            lambda,
            sweeps,
        }
    }

    /// Coordinate descent from `beta` (warm start); returns the sweep count.
    fn coordinate_descent(&self, beta: &mut [f64], lambda: f64) -> usize {
        let n = self.n as f64;
        let mut resid = self.y_centered.clone();
        for (k, col) in self.cols.iter().enumerate() {
            if beta[k] != 0.0 {
                for (r, x) in resid.iter_mut().zip(col) {
                    *r -= beta[k] * x;
                }
            }
        }
        for sweep in 1..=LASSO_MAX_SWEEPS {
            let mut max_change: f64 = 0.0;
            for (k, col) in self.cols.iter().enumerate() {
                let rho = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n + beta[k];
                let new = soft_threshold(rho, lambda);
                let delta = new - beta[k];
                if delta != 0.0 {
                    for (r, x) in resid.iter_mut().zip(col) {
                        *r -= delta * x;
                    }
                    beta[k] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < LASSO_TOL {
                return sweep;
            }
        }
        LASSO_MAX_SWEEPS
    }

    /// Smallest λ for which the all-zero solution is optimal.
    fn lambda_max(&self) -> f64 {
        let n = self.n as f64;
        self.cols
            .iter()
            .map(|c| (c.iter().zip(&self.y_centered).map(|(x, y)| x * y).sum::<f64>() / n).abs())
            .fold(0.0, f64::max)
    }
}

/// Lasso at a fixed penalty.
pub fn fit_lasso(x: &Matrix, y: &[f64], lambda: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lasso penalty must be >= 0, got {lambda}")));
    }
    let s = Standardized::new(x, y)?;
    let mut beta = vec![0.0; s.active.len()];
    let sweeps = s.coordinate_descent(&mut beta, lambda);
    Ok(s.model(&beta, Some(lambda), sweeps))
}

/// Lasso solutions along `lambdas` (any order), warm-started from the
/// largest penalty down. Results are returned in the input order.
pub fn lasso_path(x: &Matrix, y: &[f64], lambdas: &[f64]) -> Result<Vec<LinearModel>> {
    if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid("lasso penalties must be finite and >= 0"));
    }
    let s = Standardized::new(x, y)?;
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut beta = vec![0.0; s.active.len()];
    let mut out: Vec<Option<LinearModel>> = vec![None; lambdas.len()];
    for i in order {
        let sweeps = s.coordinate_descent(&mut beta, lambdas[i]);
        out[i] = Some(s.model(&beta, Some(lambdas[i]), sweeps));
    }
    Ok(out.into_iter().map(|m| m.expect("every index visited")).collect())
}

/// Smallest penalty that zeroes every coefficient of `fit_lasso(x, y, ·)`.
pub fn lasso_lambda_max(x: &Matrix, y: &[f64]) -> Result<f64> {
    Ok(Standardized::new(x, y)?.lambda_max())
}

/// Ridge regression `(1/2n)‖r‖² + (λ/2)‖β‖²` on standardized columns;
/// `λ = 0` gives ordinary least squares.
pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let s = Standardized::new(x, y)?;
    let p = s.active.len();
    let n = s.n as f64;
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for a in 0..p {
        rhs[a] = s.cols[a].iter().zip(&s.y_centered).map(|(x, y)| x * y).sum::<f64>() / n;
        for b in 0..=a {
            let v = s.cols[a].iter().zip(&s.cols[b]).map(|(x, y)| x * y).sum::<f64>() / n;
            gram[a * p + b] = v;
            gram[b * p + a] = v;
        }
        gram[a * p + a] += lambda;
    }
    let beta = if p == 0 { Vec::new() } else { solve_spd(&gram, &rhs, p)? };
    Ok(s.model(&beta, None, 0))
}

pub fn fit_ols(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    fit_ridge(x, y, 0.0)
}

/// Outcome of [`cv_lasso`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvLasso {
    pub lambda_star: f64,
    pub model: LinearModel,
    /// The grid as given.
    pub grid: Vec<f64>,
    /// Mean validation MSE over folds, aligned with `grid`.
    pub cv_mse: Vec<f64>,
}

/// `count` evenly spaced penalties from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Default cross-validation grid: 0.05, 0.10, …, 1.00.
pub fn default_lambda_grid() -> Vec<f64> {
    linear_grid(0.05, 1.0, 20)
}

/// `count` penalties spaced geometrically from `lambda_max` down to
/// `eps · lambda_max`, largest first.
pub fn log_lambda_path(lambda_max: f64, count: usize, eps: f64) -> Vec<f64> {
    if lambda_max <= 0.0 || count == 0 {
        return vec![0.0];
    }
    if count == 1 {
        return vec![lambda_max];
    }
    let step = eps.ln() / (count - 1) as f64;
    (0..count).map(|i| lambda_max * (step * i as f64).exp()).collect()
}

/// Fold label for each row: a seeded shuffle dealt round-robin into `k`
/// folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut fold = vec![0; n];
    for (pos, &i) in shuffled_indices(n, seed).iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Row indices `(train, validation)` for fold `f`.
pub fn fold_rows(fold: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, &g) in fold.iter().enumerate() {
        if g == f {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

/// Picks λ from `grid` by k-fold validation MSE, then refits on all rows.
/// Equal scores resolve toward the larger penalty.
pub fn cv_lasso(x: &Matrix, y: &[f64], grid: &[f64], k: usize, seed: u64) -> Result<CvLasso> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    let n = x.nrows();
    if k < 2 || n < k {
        return Err(Error::invalid(format!(
            "cross-validation needs 2 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    crate::error::check_dim("response length", n, y.len())?;
    let fold = fold_assignment(n, k, seed);
    let mut cv_mse = vec![0.0; grid.len()];
    for f in 0..k {
        let (tr, va) = fold_rows(&fold, f);
        let xt = x.select_rows(&tr);
        let yt: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
        let xv = x.select_rows(&va);
        let path = lasso_path(&xt, &yt, grid)?;
        for (g, m) in path.iter().enumerate() {
            let pred = m.predict(&xv);
            let mse = pred
                .iter()
                .zip(&va)
                .map(|(p, &i)| (p - y[i]) * (p - y[i]))
                .sum::<f64>()
                / va.len() as f64;
            cv_mse[g] += mse / k as f64;
        }
    }
    let mut best = 0;
    for g in 1..grid.len() {
        let better = cv_mse[g] < cv_mse[best]
            || (cv_mse[g] == cv_mse[best] && grid[g] > grid[best]);
        if better {
            best = g;
        }
    }
    let lambda_star = grid[best];
    let model = fit_lasso(x, y, lambda_star)?;
    Ok(CvLasso {
        lambda_star,
        model,
        grid: grid.to_vec(),
        cv_mse,
    })
}

/// Stationarity residuals of a lasso solution on the standardized scale:
/// the largest violation over all coefficients.
pub fn lasso_kkt_violation(x: &Matrix, y: &[f64], model: &LinearModel, lambda: f64) -> Result<f64> {
    let s = Standardized::new(x, y)?;
    let n = s.n as f64;
    let beta: Vec<f64> = s.active.iter().map(|&j| model.std_coef[j]).collect();
    let mut resid = s.y_centered.clone();
    for (k, col) in s.cols.iter().enumerate() {
        for (r, x) in resid.iter_mut().zip(col) {
            *r -= beta[k] * x;
        }
    }
    let mut worst: f64 = 0.0;
    for (k, col) in s.cols.iter().enumerate() {
        let g = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n;
        let v = if beta[k] == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * beta[k].signum()).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}
