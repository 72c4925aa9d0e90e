//! Mediator selection and the four-way partition of the feature library.
//!
//! A feature with a nonzero outcome weight is a causal pragmatic mediator
//! when it still depends on `W` after conditioning on `Z`. That dependence is
//! tested out of sample: a null model `g⁰(z)` and an alternative `g¹(w, z)`
//! are fit on a training split, and a one-sided Wilcoxon test asks whether
//! the alternative's absolute residuals on the test split are smaller.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::CausalResponseModel;
use crate::features::FeatureLibrary;
use crate::matrix::{fmt_num, stable_mean, Matrix};
use crate::regress::{self, RegressorSpec};
use crate::stats::{holm_adjust, one_sided_test, TestMethod, TestResult};

pub const DEFAULT_ALPHA: f64 = 0.01;

/// Leaves of the recursive partition of the feature library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureClass {
    /// Zero outcome weight.
    Tilde,
    /// Nonzero weight, no detectable dependence on `(W, Z)`.
    Hat,
    /// Nonzero weight, depends on `Z` but not on `W` given `Z`.
    Overline,
    /// Nonzero weight and depends on `W` given `Z`.
    Star,
}

impl FeatureClass {
    pub fn label(&self) -> &'static str {
        match self {
            FeatureClass::Tilde => "TILDE",
            FeatureClass::Hat => "HAT",
            FeatureClass::Overline => "OVERLINE",
            FeatureClass::Star => "STAR",
        }
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationConfig {
    /// Learner for the null and alternative residual models.
    #[serde(default = "RegressorSpec::forest")]
    pub learner: RegressorSpec,
    #[serde(default)]
    pub test: TestMethod,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Columns of `z` to condition on; all when absent.
    #[serde(default)]
    pub z_columns: Option<Vec<usize>>,
    /// Replace the conditional test by a marginal one (null: constant,
    /// alternative: `g(w)`). Valid only when `Z ⊥ W` by design.
    #[serde(default)]
    pub marginal: bool,
}

impl Default for MediationConfig {
    fn default() -> Self {
        MediationConfig {
            learner: RegressorSpec::forest(),
            test: TestMethod::SignedRank,
            alpha: DEFAULT_ALPHA,
            z_columns: None,
            marginal: false,
        }
    }
}

impl MediationConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

fn check_disjoint(train: &Dataset, test: &Dataset) -> Result<()> {
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    if train.is_empty() {
        return Err(Error::invalid("train split is empty"));
    }
    let keys: HashSet<u64> = train.samples().iter().map(|s| s.content_key()).collect();
    let shared = test.samples().iter().filter(|s| keys.contains(&s.content_key())).count();
    if shared > 0 {
        return Err(Error::Contract(format!(
            "train and test splits share {shared} rows; estimation and testing need separate samples"
        )));
    }
    Ok(())
}

/// Inputs a residual model sees.
#[derive(Clone, Copy)]
enum Inputs {
    Nothing,
    W,
    Z,
    Wz,
}

fn design(data: &Dataset, inputs: Inputs, z_cols: Option<&[usize]>) -> Matrix {
    match inputs {
        Inputs::Nothing => Matrix::zeros(data.len(), 0),
        Inputs::W => data.input_matrix(true, Some(&[])),
        Inputs::Z => data.input_matrix(false, z_cols),
        Inputs::Wz => data.input_matrix(true, z_cols),
    }
}

/// Absolute out-of-sample residuals of `target` under a model on `inputs`.
fn abs_residuals(
    spec: &RegressorSpec,
    inputs: Inputs,
    z_cols: Option<&[usize]>,
    train: &Dataset,
    phi_train: &[f64],
    test: &Dataset,
    phi_test: &[f64],
) -> Result<Vec<f64>> {
    let pred = match inputs {
        Inputs::Nothing => vec![stable_mean(phi_train); test.len()],
        _ => {
            let model = regress::fit(spec, &design(train, inputs, z_cols), phi_train)?;
            model.predict(&design(test, inputs, z_cols))?
        }
    };
    Ok(pred.iter().zip(phi_test).map(|(p, v)| (v - p).abs()).collect())
}

/// Residual test of one feature: `null` inputs against `alt` inputs.
fn residual_test(
    i: usize,
    lib: &FeatureLibrary,
    train: &Dataset,
    test: &Dataset,
    cfg: &MediationConfig,
    null: Inputs,
    alt: Inputs,
) -> Result<TestResult> {
    if i >= lib.len() {
        return Err(Error::invalid(format!("feature index {i} outside 0..{}", lib.len())));
    }
    let single = lib.single(i);
    let phi_train = single.eval_dataset(train)?.column(0);
    let phi_test = single.eval_dataset(test)?.column(0);
    let z_cols = cfg.z_columns.as_deref();
    let e0 = abs_residuals(&cfg.learner, null, z_cols, train, &phi_train, test, &phi_test)?;
    let e1 = abs_residuals(&cfg.learner, alt, z_cols, train, &phi_train, test, &phi_test)?;
    one_sided_test(cfg.test, &e0, &e1)
}

/// Tests `φ_i ⊥ W | Z`: the alternative `g¹(w, z)` must beat the null
/// `g⁰(z)` out of sample.
pub fn ci_test_feature(
    phi_index: usize,
    lib: &FeatureLibrary,
    train: &Dataset,
    test: &Dataset,
    cfg: &MediationConfig,
) -> Result<TestResult> {
    check_disjoint(train, test)?;
    let (null, alt) = if cfg.marginal {
        (Inputs::Nothing, Inputs::W)
    } else {
        (Inputs::Z, Inputs::Wz)
    };
    residual_test(phi_index, lib, train, test, cfg, null, alt)
}

/// Tests `φ_i ⊥ (W, Z)`: a constant null against `g(w, z)`.
pub fn joint_test_feature(
    phi_index: usize,
    lib: &FeatureLibrary,
    train: &Dataset,
    test: &Dataset,
    cfg: &MediationConfig,
) -> Result<TestResult> {
    check_disjoint(train, test)?;
    residual_test(phi_index, lib, train, test, cfg, Inputs::Nothing, Inputs::Wz)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub name: String,
    pub theta: f64,
    /// Conditional test `φ ⊥ W | Z`.
    pub p_raw: Option<f64>,
    pub p_adjusted: Option<f64>,
    /// Joint test `φ ⊥ (W, Z)`.
    pub p_joint_raw: Option<f64>,
    pub p_joint_adjusted: Option<f64>,
    pub class: FeatureClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationReport {
    pub records: Vec<FeatureRecord>,
    pub alpha: f64,
    pub method: TestMethod,
    #[serde(default)]
    pub note: Option<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

impl MediationReport {
    /// Names of the selected mediators, in library order.
    pub fn mediators(&self) -> Vec<String> {
        self.of_class(FeatureClass::Star)
    }

    pub fn of_class(&self, class: FeatureClass) -> Vec<String> {
        self.records
            .iter()
            .filter(|r| r.class == class)
            .map(|r| r.name.clone())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,theta,p_raw,p_adj,class,p_joint_raw,p_joint_adj\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.name,
                fmt_num(r.theta),
                fmt_opt(r.p_raw),
                fmt_opt(r.p_adjusted),
                r.class.label(),
                fmt_opt(r.p_joint_raw),
                fmt_opt(r.p_joint_adjusted)
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "alpha = {}, test = {}, Holm-adjusted within each test family\n",
            self.alpha,
            self.method.id()
        );
        for class in [FeatureClass::Star, FeatureClass::Overline, FeatureClass::Hat, FeatureClass::Tilde] {
            let names = self.of_class(class);
            let _ = writeln!(
                out,
                "{:<9} {}",
                class.label(),
                if names.is_empty() { "-".to_string() } else { names.join(", ") }
            );
        }
        if let Some(note) = &self.note {
            let _ = writeln!(out, "note: {note}");
        }
        out
    }

    /// Writes `mediation.csv` and `mediation.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("mediation.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let txt = dir.join("mediation.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))
    }
}

/// Full partition. Features with `θ_i = 0` are TILDE. For the rest, the
/// conditional tests (Holm within that family) decide STAR; the remaining
/// ones are OVERLINE when the joint test (Holm within its family) rejects
/// and HAT otherwise.
pub fn partition_features(
    crm: &CausalResponseModel,
    lib: &FeatureLibrary,
    train: &Dataset,
    test: &Dataset,
    cfg: &MediationConfig,
) -> Result<MediationReport> {
    cfg.validate()?;
    crate::error::check_dim("outcome weights", lib.len(), crm.theta.len())?;
    let tested = crm.support();
    let mut records: Vec<FeatureRecord> = lib
        .names()
        .iter()
        .zip(&crm.theta)
        .map(|(name, &theta)| FeatureRecord {
            name: name.clone(),
            theta,
            p_raw: None,
            p_adjusted: None,
            p_joint_raw: None,
            p_joint_adjusted: None,
            class: FeatureClass::Tilde,
        })
        .collect();
    if tested.is_empty() {
        return Ok(MediationReport {
            records,
            alpha: cfg.alpha,
            method: cfg.test,
            note: Some("no feature has a nonzero outcome weight; nothing was tested".into()),
        });
    }
    check_disjoint(train, test)?;
    let results: Vec<(TestResult, TestResult)> = tested
        .par_iter()
        .map(|&i| {
            Ok((
                ci_test_feature(i, lib, train, test, cfg)?,
                joint_test_feature(i, lib, train, test, cfg)?,
            ))
        })
        .collect::<Result<_>>()?;
    let p_ci: Vec<f64> = results.iter().map(|r| r.0.p_value).collect();
    let p_joint: Vec<f64> = results.iter().map(|r| r.1.p_value).collect();
    let adj_ci = holm_adjust(&p_ci)?;
    let adj_joint = holm_adjust(&p_joint)?;
    for (k, &i) in tested.iter().enumerate() {
        let r = &mut records[i];
        r.p_raw = Some(p_ci[k]);
        r.p_adjusted = Some(adj_ci[k]);
        r.p_joint_raw = Some(p_joint[k]);
        r.p_joint_adjusted = Some(adj_joint[k]);
        r.class = if adj_ci[k] <= cfg.alpha {
            FeatureClass::Star
        } else if adj_joint[k] <= cfg.alpha {
            FeatureClass::Overline
        } else {
            FeatureClass::Hat
        };
    }
    Ok(MediationReport {
        records,
        alpha: cfg.alpha,
        method: cfg.test,
        note: None,
    })
}

/// Mediator selection: tests only features with `θ_i ≠ 0`, Holm-adjusts
/// across them and keeps those with adjusted p-value at most `alpha`. The
/// returned report carries the full partition; [`MediationReport::mediators`]
/// is the selected set.
pub fn select_mediators(
    crm: &CausalResponseModel,
    lib: &FeatureLibrary,
    train: &Dataset,
    test: &Dataset,
    cfg: &MediationConfig,
) -> Result<MediationReport> {
    partition_features(crm, lib, train, test, cfg)
}
