//! Two-stage estimator of `E[Y | do(w), z]`.
//!
//! Stage one regresses each feature `φ_i(X, Z)` on `(w, z)` over the pooled
//! historic regimes. Stage two fits a cross-validated lasso of `y` on the
//! stage-one predictions. For a new regime only stage one is refit, on
//! unlabeled rows, and predictions are `θ₀ + θᵀ g★(w, z)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::{FeatureLibrary, FeatureManifest};
use crate::matrix::Matrix;
use crate::regress::linear::{
    cv_lasso, default_lambda_grid, fit_ols, fold_assignment, fold_rows, lasso_lambda_max, log_lambda_path,
};
use crate::regress::{self, fit_multi_output, MultiOutputModel, RegressorSpec};
use crate::seeds;

fn default_folds() -> usize {
    5
}

fn default_path_len() -> usize {
    100
}

fn default_path_eps() -> f64 {
    1e-3
}

/// Penalties searched by the stage-two cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaGrid {
    /// Geometric path from the smallest all-zero penalty down to
    /// `eps` times that value.
    Auto {
        #[serde(default = "default_path_len")]
        count: usize,
        #[serde(default = "default_path_eps")]
        eps: f64,
    },
    Fixed { values: Vec<f64> },
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Auto {
            count: default_path_len(),
            eps: default_path_eps(),
        }
    }
}

impl LambdaGrid {
    /// The baseline range 0.05, 0.10, …, 1.00.
    pub fn baseline() -> Self {
        LambdaGrid::Fixed {
            values: default_lambda_grid(),
        }
    }

    pub fn resolve(&self, x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            LambdaGrid::Auto { count, eps } => {
                if !(*eps > 0.0 && *eps < 1.0) {
                    return Err(Error::invalid(format!("lambda path eps must lie in (0, 1), got {eps}")));
                }
                Ok(log_lambda_path(lasso_lambda_max(x, y)?, *count, *eps))
            }
            LambdaGrid::Fixed { values } => Ok(values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "RegressorSpec::forest")]
    pub stage_one: RegressorSpec,
    #[serde(default)]
    pub lambda_grid: LambdaGrid,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    /// Folds for the out-of-fold stage-one predictions fed to stage two.
    #[serde(default = "default_folds")]
    pub oof_folds: usize,
    /// Feed in-sample stage-one predictions to stage two instead.
    #[serde(default)]
    pub in_sample_stage_one: bool,
    /// Columns of `z` the stage-one models condition on; all when absent.
    #[serde(default)]
    pub z_columns: Option<Vec<usize>>,
    /// Refit the lasso support by least squares (relaxed lasso).
    #[serde(default)]
    pub refit_support: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stage_one: RegressorSpec::forest(),
            lambda_grid: LambdaGrid::default(),
            cv_folds: 5,
            oof_folds: 5,
            in_sample_stage_one: false,
            z_columns: None,
            refit_support: false,
            seed: 0,
        }
    }
}

/// Fitted `g_i(w, z) ≈ E[φ_i | w, z]`, one regressor per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneModel {
    pub model: MultiOutputModel,
    pub d_w: usize,
    pub d_z: usize,
    pub z_columns: Option<Vec<usize>>,
    pub spec: RegressorSpec,
    pub feature_names: Vec<String>,
}

impl StageOneModel {
    pub fn n_features(&self) -> usize {
        self.model.n_outputs()
    }

    fn input_row(&self, w: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_dim("treatment w", self.d_w, w.len())?;
        crate::error::check_dim("covariates z", self.d_z, z.len())?;
        let mut row = w.to_vec();
        match &self.z_columns {
            None => row.extend_from_slice(z),
            Some(cols) => row.extend(cols.iter().map(|&j| z[j])),
        }
        Ok(row)
    }

    pub fn predict_g(&self, w: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.model.predict_row(&self.input_row(w, z)?)
    }

    /// `n × d` matrix of `ĝ` over the rows of `data`.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Matrix> {
        self.check_schema(data)?;
        self.model.predict(&data.input_matrix(true, self.z_columns.as_deref()))
    }

    fn check_schema(&self, data: &Dataset) -> Result<()> {
        crate::error::check_dim("dataset w", self.d_w, data.schema().d_w())?;
        crate::error::check_dim("dataset z", self.d_z, data.schema().d_z())
    }
}

/// `y ≈ θ₀ + θᵀ g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalResponseModel {
    pub theta0: f64,
    pub theta: Vec<f64>,
    pub lambda_star: f64,
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub cv_mse: Vec<f64>,
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    /// Summation order used in prediction. It depends only on the stage-two
    /// design columns, so relabeling features leaves predictions unchanged.
    #[serde(default)]
    pub eval_order: Vec<usize>,
}

impl CausalResponseModel {
    /// Indices of the nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        (0..self.theta.len()).filter(|&i| self.theta[i] != 0.0).collect()
    }

    pub fn predict_from_g(&self, g: &[f64]) -> Result<f64> {
        crate::error::check_dim("stage-one predictions", self.theta.len(), g.len())?;
        let mut acc = self.theta0;
        if self.eval_order.len() == self.theta.len() {
            for &i in &self.eval_order {
                acc += self.theta[i] * g[i];
            }
        } else {
            for (t, v) in self.theta.iter().zip(g) {
                acc += t * v;
            }
        }
        Ok(acc)
    }
}

fn validate_historic(historic: &[Dataset]) -> Result<Dataset> {
    if historic.is_empty() || historic.iter().all(|d| d.is_empty()) {
        return Err(Error::invalid("no historic data to fit on"));
    }
    if let Some(d) = historic.iter().find(|d| !d.is_labeled()) {
        return Err(Error::Contract(format!(
            "historic data must be labeled ({} unlabeled rows given)",
            d.len()
        )));
    }
    Dataset::pool(historic)
}

fn fit_on(data: &Dataset, lib: &FeatureLibrary, cfg: &PipelineConfig) -> Result<StageOneModel> {
    if data.is_empty() {
        return Err(Error::invalid("stage one needs at least one row"));
    }
    let schema = data.schema();
    if let Some(cols) = &cfg.z_columns {
        if let Some(&bad) = cols.iter().find(|&&j| j >= schema.d_z()) {
            return Err(Error::invalid(format!("z column {bad} out of range 0..{}", schema.d_z())));
        }
    }
    let phi = lib.eval_dataset(data)?;
    let x = data.input_matrix(true, cfg.z_columns.as_deref());
    Ok(StageOneModel {
        model: fit_multi_output(&x, &phi, &cfg.stage_one)?,
        d_w: schema.d_w(),
        d_z: schema.d_z(),
        z_columns: cfg.z_columns.clone(),
        spec: cfg.stage_one.clone(),
        feature_names: lib.names().to_vec(),
    })
}

/// Pools the labeled historic regimes and fits one regression of each
/// feature on `(w, z)`.
pub fn fit_stage_one(historic: &[Dataset], lib: &FeatureLibrary, cfg: &PipelineConfig) -> Result<StageOneModel> {
    fit_on(&validate_historic(historic)?, lib, cfg)
}

/// Out-of-fold stage-one predictions: row `i` is predicted by a model that
/// did not see it.
pub fn out_of_fold_g(data: &Dataset, lib: &FeatureLibrary, cfg: &PipelineConfig) -> Result<Matrix> {
    let n = data.len();
    let k = cfg.oof_folds;
    if k < 2 || n < k {
        return Err(Error::invalid(format!("out-of-fold prediction needs 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let fold = fold_assignment(n, k, seeds::derive(cfg.seed, 0x00F));
    let mut g = Matrix::zeros(n, lib.len());
    for f in 0..k {
        let (tr, va) = fold_rows(&fold, f);
        let model = fit_on(&data.subset(&tr), lib, cfg)?;
        let pred = model.predict_dataset(&data.subset(&va))?;
        for (r, &i) in va.iter().enumerate() {
            g.row_mut(i).copy_from_slice(pred.row(r));
        }
    }
    Ok(g)
}

/// Stage two on an explicit design of stage-one values (for example the
/// true conditional expectations).
pub fn fit_stage_two_matrix(g: &Matrix, y: &[f64], names: &[String], cfg: &PipelineConfig) -> Result<CausalResponseModel> {
    crate::error::check_dim("feature names", g.ncols(), names.len())?;
    if g.nrows() < cfg.cv_folds {
        return Err(Error::invalid(format!(
            "stage two has {} rows, fewer than {} folds",
            g.nrows(),
            cfg.cv_folds
        )));
    }
    // Solve in an order fixed by column contents so that relabeling the
    // features permutes the solution exactly.
    let keys: Vec<u64> = (0..g.ncols())
        .map(|j| (0..g.nrows()).fold(0x51u64, |h, i| seeds::derive(h, g.get(i, j).to_bits())))
        .collect();
    let mut order: Vec<usize> = (0..g.ncols()).collect();
    order.sort_by_key(|&j| (keys[j], j));
    let design = g.select_columns(&order);
    let grid = cfg.lambda_grid.resolve(&design, y)?;
    let fit = cv_lasso(&design, y, &grid, cfg.cv_folds, seeds::derive(cfg.seed, 0xCF))?;
    let mut theta = vec![0.0; g.ncols()];
    let mut theta0 = fit.model.intercept;
    let support: Vec<usize> = (0..order.len()).filter(|&p| fit.model.std_coef[p] != 0.0).collect();
    if cfg.refit_support && !support.is_empty() {
        let cols: Vec<usize> = support.iter().map(|&p| order[p]).collect();
        let ols = fit_ols(&g.select_columns(&cols), y)?;
        theta0 = ols.intercept;
        for (k, &j) in cols.iter().enumerate() {
            theta[j] = ols.coef[k];
        }
    } else {
        for &p in &support {
            theta[order[p]] = fit.model.coef[p];
        }
    }
    Ok(CausalResponseModel {
        theta0,
        theta,
        lambda_star: fit.lambda_star,
        feature_names: names.to_vec(),
        cv_mse: fit.cv_mse,
        lambda_grid: fit.grid,
        eval_order: order,
    })
}

/// Regresses `y` on stage-one predictions over the pooled historic rows.
/// Predictions are out-of-fold unless `cfg.in_sample_stage_one` is set.
pub fn fit_stage_two(
    stage_one: &StageOneModel,
    historic: &[Dataset],
    lib: &FeatureLibrary,
    cfg: &PipelineConfig,
) -> Result<CausalResponseModel> {
    let pooled = validate_historic(historic)?;
    crate::error::check_dim("stage-one outputs", lib.len(), stage_one.n_features())?;
    let g = if cfg.in_sample_stage_one {
        stage_one.predict_dataset(&pooled)?
    } else {
        out_of_fold_g(&pooled, lib, cfg)?
    };
    fit_stage_two_matrix(&g, &pooled.y()?, lib.names(), cfg)
}

/// Refits stage one on unlabeled rows of a single new regime, reusing the
/// template's learner and conditioning columns.
pub fn adapt_stage_one(template: &StageOneModel, new_unlabeled: &Dataset, lib: &FeatureLibrary) -> Result<StageOneModel> {
    if new_unlabeled.is_labeled() {
        return Err(Error::Contract(
            "adaptation takes unlabeled data; strip the outcome column first".into(),
        ));
    }
    if new_unlabeled.is_empty() {
        return Err(Error::invalid("no new-regime rows to adapt on"));
    }
    if new_unlabeled.regimes().len() > 1 {
        return Err(Error::Contract("adaptation data spans more than one regime".into()));
    }
    template.check_schema(new_unlabeled)?;
    let cfg = PipelineConfig {
        stage_one: template.spec.clone(),
        z_columns: template.z_columns.clone(),
        ..PipelineConfig::default()
    };
    fit_on(new_unlabeled, lib, &cfg)
}

/// `θ₀ + Σ_i θ_i g★_i(w, z)`.
pub fn predict_do(crm: &CausalResponseModel, g_star: &StageOneModel, w: &[f64], z: &[f64]) -> Result<f64> {
    crm.predict_from_g(&g_star.predict_g(w, z)?)
}

pub fn predict_dataset(crm: &CausalResponseModel, g_star: &StageOneModel, data: &Dataset) -> Result<Vec<f64>> {
    let g = g_star.predict_dataset(data)?;
    g.rows().map(|r| crm.predict_from_g(r)).collect()
}

/// Stage one and stage two fitted together, plus the feature definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub features: FeatureManifest,
    pub stage_one: StageOneModel,
    pub response: CausalResponseModel,
}

const CONFIG_FILE: &str = "pipeline.json";
const FEATURES_FILE: &str = "features.json";
const STAGE_ONE_FILE: &str = "stage_one.json";
const RESPONSE_FILE: &str = "response.json";

impl Pipeline {
    pub fn fit(historic: &[Dataset], lib: &FeatureLibrary, cfg: &PipelineConfig) -> Result<Self> {
        let stage_one = fit_stage_one(historic, lib, cfg)?;
        let response = fit_stage_two(&stage_one, historic, lib, cfg)?;
        Ok(Pipeline {
            config: cfg.clone(),
            features: lib.to_manifest(),
            stage_one,
            response,
        })
    }

    pub fn library(&self) -> Result<FeatureLibrary> {
        FeatureLibrary::from_manifest(&self.features)
    }

    /// Copy whose stage one is refit on the new regime.
    pub fn adapt(&self, new_unlabeled: &Dataset) -> Result<Pipeline> {
        let stage_one = adapt_stage_one(&self.stage_one, new_unlabeled, &self.library()?)?;
        Ok(Pipeline {
            stage_one,
            ..self.clone()
        })
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        predict_dataset(&self.response, &self.stage_one, data)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        regress::save_json(&self.config, dir.join(CONFIG_FILE))?;
        self.features.save(dir.join(FEATURES_FILE))?;
        regress::save_json(&self.stage_one, dir.join(STAGE_ONE_FILE))?;
        regress::save_json(&self.response, dir.join(RESPONSE_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = Pipeline {
            config: regress::load_json(dir.join(CONFIG_FILE))?,
            features: FeatureManifest::load(dir.join(FEATURES_FILE))?,
            stage_one: regress::load_json(dir.join(STAGE_ONE_FILE))?,
            response: regress::load_json(dir.join(RESPONSE_FILE))?,
        };
        if p.response.feature_names != p.stage_one.feature_names {
            return Err(Error::Config(format!(
                "model in {} has mismatched feature names between stages",
                dir.display()
            )));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{RegimeId, Sample, Schema};
    use crate::features::FeatureDef;
    use crate::regress::ForestParams;

    fn lib_x0() -> FeatureLibrary {
        FeatureLibrary::new(vec![("phi".into(), FeatureDef::x(0))], Default::default()).unwrap()
    }

    /// x0 = w exactly, y = 2 x0 + 1.
    fn planted(n: usize, labeled: bool) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let w = (i % 7) as f64;
                Sample {
                    id: i as u64,
                    regime: RegimeId(0),
                    w: vec![w],
                    z: vec![(i % 3) as f64],
                    x: vec![w],
                    y: labeled.then_some(2.0 * w + 1.0),
                }
            })
            .collect();
        Dataset::new(Schema::new(1, 1, 1, labeled), samples).unwrap()
    }

    #[test]
    fn predict_do_arithmetic() {
        let crm = CausalResponseModel {
            theta0: 1.0,
            theta: vec![0.7, 0.0, 0.0, -0.5],
            lambda_star: 0.05,
            feature_names: (1..=4).map(|i| format!("phi{i}")).collect(),
            cv_mse: vec![],
            lambda_grid: vec![],
            eval_order: vec![],
        };
        assert!((crm.predict_from_g(&[2.0, 5.0, 5.0, 2.0]).unwrap() - 1.4).abs() < 1e-12);
        assert!(crm.predict_from_g(&[1.0]).is_err());
    }

    #[test]
    fn planted_identity_recovers_w() {
        let d = planted(500, true);
        let cfg = PipelineConfig::default();
        let s1 = fit_stage_one(&[d.clone()], &lib_x0(), &cfg).unwrap();
        let g = s1.predict_dataset(&d).unwrap();
        let mse: f64 = d.samples().iter().zip(g.rows()).map(|(s, r)| (s.w[0] - r[0]).powi(2)).sum::<f64>() / 500.0;
        assert!(mse < 1e-3, "{mse}");
    }

    #[test]
    fn contracts_are_enforced() {
        let d = planted(50, true);
        let cfg = PipelineConfig::default();
        assert!(fit_stage_one(&[], &lib_x0(), &cfg).is_err());
        assert!(matches!(
            fit_stage_one(&[d.strip_labels()], &lib_x0(), &cfg),
            Err(Error::Contract(_))
        ));
        let s1 = fit_stage_one(&[d.clone()], &lib_x0(), &cfg).unwrap();
        assert!(matches!(adapt_stage_one(&s1, &d, &lib_x0()), Err(Error::Contract(_))));
        assert!(adapt_stage_one(&s1, &Dataset::empty(d.schema().with_labels(false)), &lib_x0()).is_err());
        let star = adapt_stage_one(&s1, &planted(30, false), &lib_x0()).unwrap();
        assert_eq!(star.n_features(), 1);
        assert!(s1.predict_g(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn end_to_end_on_planted_data() {
        let d = planted(400, true);
        let mut cfg = PipelineConfig::default();
        cfg.stage_one = RegressorSpec::Forest(ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        });
        let p = Pipeline::fit(&[d.clone()], &lib_x0(), &cfg).unwrap();
        assert!((p.response.theta[0] - 2.0).abs() < 0.05);
        let yhat = p.predict(&d).unwrap();
        let y = d.y().unwrap();
        let mse = crate::matrix::mean_squared_error(&yhat, &y);
        assert!(mse < 0.05, "{mse}");

        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        assert_eq!(Pipeline::load(dir.path()).unwrap(), p);
    }

    #[test]
    fn constant_g_column_gets_zero_weight() {
        let n = 200;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / 10.0, 3.0]).collect();
        let g = Matrix::from_rows(&rows, 2).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| 0.5 * r[0]).collect();
        let names = vec!["a".to_string(), "b".to_string()];
        let crm = fit_stage_two_matrix(&g, &y, &names, &PipelineConfig::default()).unwrap();
        assert_eq!(crm.theta[1], 0.0);
        assert!(crm.theta[0] > 0.4);
        assert!(fit_stage_two_matrix(&g.select_rows(&[0, 1, 2]), &y[..3], &names, &PipelineConfig::default()).is_err());
    }
}
