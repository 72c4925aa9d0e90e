//! Regression learners used as stage-one models, residual models for the
//! independence tests, and new-regime baselines.
//!
//! Every learner is deterministic given its data and [`RegressorSpec`].

pub mod forest;
pub mod gboost;
pub mod linear;
pub mod tree;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use forest::{fit_forest, Forest, ForestParams};
pub use gboost::{fit_gboost, GBoost, GBoostParams};
pub use linear::{
    cv_lasso, default_lambda_grid, fit_lasso, fit_ols, fit_ridge, CvLasso, LinearModel,
};

fn default_folds() -> usize {
    5
}

/// Learner kind plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorSpec {
    Ols,
    Ridge {
        lambda: f64,
    },
    /// Fixed `lambda`, or cross-validated over `grid` when `lambda` is absent.
    Lasso {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default = "default_lambda_grid")]
        grid: Vec<f64>,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default)]
        seed: u64,
    },
    Forest(ForestParams),
    Gboost(GBoostParams),
}

impl RegressorSpec {
    pub fn forest() -> Self {
        RegressorSpec::Forest(ForestParams::default())
    }

    pub fn gboost() -> Self {
        RegressorSpec::Gboost(GBoostParams::default())
    }

    pub fn lasso_cv() -> Self {
        RegressorSpec::Lasso {
            lambda: None,
            grid: default_lambda_grid(),
            folds: default_folds(),
            seed: 0,
        }
    }

    /// Short identifier used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            RegressorSpec::Ols => "ols",
            RegressorSpec::Ridge { .. } => "ridge",
            RegressorSpec::Lasso { .. } => "lasso",
            RegressorSpec::Forest(_) => "forest",
            RegressorSpec::Gboost(_) => "gboost",
        }
    }

    /// Same spec with its stochastic seed replaced; deterministic learners
    /// are returned unchanged.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            RegressorSpec::Lasso { seed: sd, .. } => *sd = seed,
            RegressorSpec::Forest(p) => p.seed = seed,
            _ => {}
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedRegressor {
    Linear(LinearModel),
    Forest(Forest),
    Gboost(GBoost),
}

impl FittedRegressor {
    pub fn n_features(&self) -> usize {
        match self {
            FittedRegressor::Linear(m) => m.n_features(),
            FittedRegressor::Forest(f) => f.n_features,
            FittedRegressor::Gboost(g) => g.n_features,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        crate::error::check_dim("regressor input", self.n_features(), row.len())?;
        Ok(match self {
            FittedRegressor::Linear(m) => m.predict_row(row),
            FittedRegressor::Forest(f) => f.predict_row(row),
            FittedRegressor::Gboost(g) => g.predict_row(row),
        })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        crate::error::check_dim("regressor input", self.n_features(), x.ncols())?;
        Ok(x.rows()
            .map(|r| match self {
                FittedRegressor::Linear(m) => m.predict_row(r),
                FittedRegressor::Forest(f) => f.predict_row(r),
                FittedRegressor::Gboost(g) => g.predict_row(r),
            })
            .collect())
    }
}

/// Fits a single-output regressor.
pub fn fit(spec: &RegressorSpec, x: &Matrix, y: &[f64]) -> Result<FittedRegressor> {
    Ok(match spec {
        RegressorSpec::Ols => FittedRegressor::Linear(fit_ols(x, y)?),
        RegressorSpec::Ridge { lambda } => FittedRegressor::Linear(fit_ridge(x, y, *lambda)?),
        RegressorSpec::Lasso {
            lambda: Some(l), ..
        } => FittedRegressor::Linear(fit_lasso(x, y, *l)?),
        RegressorSpec::Lasso {
            lambda: None,
            grid,
            folds,
            seed,
        } => {
            let k = (*folds).min(x.nrows());
            FittedRegressor::Linear(cv_lasso(x, y, grid, k, *seed)?.model)
        }
        RegressorSpec::Forest(p) => FittedRegressor::Forest(fit_forest(x, y, p)?),
        RegressorSpec::Gboost(p) => FittedRegressor::Gboost(fit_gboost(x, y, p)?),
    })
}

/// `d` independent regressors sharing one spec, one per column of `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputModel {
    pub n_features: usize,
    pub outputs: Vec<FittedRegressor>,
}

impl MultiOutputModel {
    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.outputs.iter().map(|m| m.predict_row(row)).collect()
    }

    /// `n × d` predictions.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        crate::error::check_dim("multi-output input", self.n_features, x.ncols())?;
        let cols: Vec<Vec<f64>> = self
            .outputs
            .par_iter()
            .map(|m| m.predict(x))
            .collect::<Result<_>>()?;
        let mut out = Matrix::zeros(x.nrows(), cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                out.set(i, j, *v);
            }
        }
        Ok(out)
    }
}

/// Fits every column of `y` with the same spec (and seed), so permuting the
/// columns permutes the fitted models.
pub fn fit_multi_output(x: &Matrix, y: &Matrix, spec: &RegressorSpec) -> Result<MultiOutputModel> {
    if y.ncols() == 0 {
        return Err(Error::invalid("multi-output fit needs at least one output"));
    }
    crate::error::check_dim("multi-output rows", x.nrows(), y.nrows())?;
    let outputs = (0..y.ncols())
        .into_par_iter()
        .map(|j| fit(spec, x, &y.column(j)))
        .collect::<Result<_>>()?;
    Ok(MultiOutputModel {
        n_features: x.ncols(),
        outputs,
    })
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: u32,
    model: T,
}

/// Writes a model as versioned JSON.
pub fn save_json<T: Serialize>(model: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&Versioned {
        version: MODEL_FORMAT_VERSION,
        model,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Versioned<T> = serde_json::from_str(&text)?;
    if v.version != MODEL_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported model format version {} in {}",
            v.version,
            path.display()
        )));
    }
    Ok(v.model)
}
