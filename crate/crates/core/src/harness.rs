//! Evaluation protocol: MSE against label fraction for the two-stage method
//! and for supervised baselines trained on new-regime labels only.
//!
//! Per trial, the new-regime data is split once into a training pool and a
//! test set. A baseline at fraction `f` trains on the first `⌊f·|pool|⌋` rows
//! of a seeded shuffle of the pool (averaged over `shuffles` shuffles). The
//! method adapts stage one on the whole pool with labels removed, so its MSE
//! does not depend on `f` and is repeated across fractions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, shuffled_indices, Dataset, RegimeId};
use crate::error::{Error, Result};
use crate::estimator::{Pipeline, PipelineConfig};
use crate::features::{FeatureLibrary, FeatureManifest};
use crate::matrix::{fmt_num, mean_squared_error, stable_mean};
use crate::mediation::{select_mediators, MediationConfig, MediationReport};
use crate::regress::{self, RegressorSpec};
use crate::seeds;
use crate::simgen::{self, ImgPert, ImgPertConfig, ThetaMode};

/// Name of the two-stage method in result tables.
pub const METHOD_NAME: &str = "two_stage";

pub fn default_fractions() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

pub fn default_baselines() -> Vec<RegressorSpec> {
    vec![RegressorSpec::lasso_cv(), RegressorSpec::forest(), RegressorSpec::gboost()]
}

fn default_trials() -> usize {
    100
}
fn default_test_fraction() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    crate::mediation::DEFAULT_ALPHA
}
fn default_true() -> bool {
    true
}

/// Where the data of each trial comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// The image-perturbation benchmark; `generator.n` is the historic size.
    ImgPert {
        #[serde(default)]
        generator: ImgPertConfig,
        #[serde(default = "default_new_n")]
        new_n: usize,
        #[serde(default = "default_new_w")]
        new_w: f64,
    },
    /// Fixed files. Trials differ only in the split and learner seeds.
    Csv {
        historic: Vec<PathBuf>,
        new_regime: PathBuf,
        features: PathBuf,
    },
}

fn default_new_n() -> usize {
    simgen::NEW_REGIME_N
}
fn default_new_w() -> f64 {
    simgen::NEW_REGIME_W
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::ImgPert {
            generator: ImgPertConfig::default(),
            new_n: default_new_n(),
            new_w: default_new_w(),
        }
    }
}

/// What the recorded MSE compares predictions against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MseTarget {
    /// Observed test outcomes.
    #[default]
    Observed,
    /// The closed-form causal effect; generator sources only.
    CausalEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub source: DataSource,
    /// Pipeline settings; for the benchmark, `z_columns` defaults to the
    /// pattern index.
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<RegressorSpec>,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub theta_mode: ThetaMode,
    /// Baseline shuffles per fraction; 10 in fixed-θ mode and 1 in sampled
    /// mode when absent.
    #[serde(default)]
    pub shuffles: Option<usize>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub target: MseTarget,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Run mediator selection on the first trial.
    #[serde(default = "default_true")]
    pub mediation: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        validate_fractions(&self.fractions)?;
        if self.trials == 0 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if self.baselines.is_empty() {
            return Err(Error::Config("at least one baseline is required".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.shuffles == Some(0) {
            return Err(Error::Config("shuffles must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        match &self.source {
            DataSource::ImgPert { generator, .. } => {
                generator.validate().map_err(|e| Error::Config(e.to_string()))?
            }
            DataSource::Csv { historic, .. } => {
                if historic.is_empty() {
                    return Err(Error::Config("csv source needs at least one historic file".into()));
                }
                if self.target == MseTarget::CausalEffect {
                    return Err(Error::Config("the causal-effect target needs a generator source".into()));
                }
                if self.theta_mode == ThetaMode::Sampled {
                    return Err(Error::Config("sampled θ needs a generator source".into()));
                }
            }
        }
        Ok(())
    }

    pub fn shuffle_count(&self) -> usize {
        self.shuffles.unwrap_or(match self.theta_mode {
            ThetaMode::Fixed => 10,
            ThetaMode::Sampled => 1,
        })
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        match (&self.pipeline, &self.source) {
            (Some(p), _) => p.clone(),
            (None, DataSource::ImgPert { .. }) => PipelineConfig {
                z_columns: Some(vec![simgen::PATTERN_COLUMN]),
                ..PipelineConfig::default()
            },
            (None, DataSource::Csv { .. }) => PipelineConfig::default(),
        }
    }
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::Config("no label fractions given".into()));
    }
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::Config(format!("label fractions must lie in (0, 1]: {fractions:?}")));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("label fractions must increase strictly: {fractions:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub label_fraction: f64,
    pub trial: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub label_fraction: f64,
    pub mean: f64,
    /// Standard deviation over trials divided by √trials; 0 for one trial.
    pub std_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Methods in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Rows sorted by (method order, fraction, trial).
    pub fn sorted(&self) -> ResultTable {
        let methods = self.methods();
        let rank = |m: &str| methods.iter().position(|x| x == m).unwrap_or(usize::MAX);
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| {
            rank(&a.method)
                .cmp(&rank(&b.method))
                .then(a.label_fraction.total_cmp(&b.label_fraction))
                .then(a.trial.cmp(&b.trial))
        });
        ResultTable { rows }
    }

    /// Mean and standard error per (method, fraction), over trials.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let methods = self.methods();
        let mut groups: BTreeMap<(usize, u64), Vec<(usize, f64)>> = BTreeMap::new();
        for r in &self.rows {
            let m = methods.iter().position(|x| *x == r.method).expect("method listed");
            groups
                .entry((m, r.label_fraction.to_bits()))
                .or_default()
                .push((r.trial, r.mse));
        }
        groups
            .into_iter()
            .map(|((m, f), mut v)| {
                v.sort_by_key(|p| p.0);
                let vals: Vec<f64> = v.iter().map(|p| p.1).collect();
                let n = vals.len();
                let mean = stable_mean(&vals);
                let std_error = if n > 1 {
                    let ss: f64 = vals.iter().map(|x| (x - mean).powi(2)).sum();
                    (ss / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt()
                } else {
                    0.0
                };
                Aggregate {
                    method: methods[m].clone(),
                    label_fraction: f64::from_bits(f),
                    mean,
                    std_error,
                    trials: n,
                }
            })
            .collect()
    }

    pub fn aggregate(&self, method: &str, fraction: f64) -> Option<Aggregate> {
        self.aggregates()
            .into_iter()
            .find(|a| a.method == method && a.label_fraction == fraction)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,label_fraction,trial,mse\n");
        for r in &self.sorted().rows {
            let _ = writeln!(out, "{},{},{},{}", r.method, fmt_num(r.label_fraction), r.trial, fmt_num(r.mse));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,label_fraction,trials,mean_mse,std_error\n");
        for a in self.aggregates() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                a.method,
                fmt_num(a.label_fraction),
                a.trials,
                fmt_num(a.mean),
                fmt_num(a.std_error)
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ResultTable> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "method,label_fraction,trial,mse" {
            return Err(Error::HeaderMismatch {
                expected: "method,label_fraction,trial,mse".into(),
                found: header.into(),
            });
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(Error::RaggedRow { row: i + 1, expected: 4, found: cells.len() });
            }
            let num = |c: usize, name: &str| -> Result<f64> {
                cells[c].parse::<f64>().map_err(|_| Error::BadCell {
                    row: i + 1,
                    column: name.into(),
                    value: cells[c].into(),
                })
            };
            rows.push(ResultRow {
                method: cells[0].to_string(),
                label_fraction: num(1, "label_fraction")?,
                trial: cells[2].parse().map_err(|_| Error::BadCell {
                    row: i + 1,
                    column: "trial".into(),
                    value: cells[2].into(),
                })?,
                mse: num(3, "mse")?,
            });
        }
        Ok(ResultTable { rows })
    }
}

fn train_size(fraction: f64, pool: usize) -> usize {
    ((pool as f64) * fraction + 1e-9).floor() as usize
}

/// Baseline rows for one trial. Each baseline trains on `(w, z)` of the
/// first `⌊f·|pool|⌋` rows of a seeded shuffle of `pool` and predicts
/// `truth` on `test`; the recorded MSE is the mean over `shuffles` shuffles.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline_curve(
    pool: &Dataset,
    test: &Dataset,
    truth: &[f64],
    fractions: &[f64],
    baselines: &[RegressorSpec],
    shuffles: usize,
    seed: u64,
    trial: usize,
) -> Result<Vec<ResultRow>> {
    validate_fractions(fractions)?;
    if baselines.is_empty() {
        return Err(Error::Config("at least one baseline is required".into()));
    }
    if shuffles == 0 {
        return Err(Error::Config("shuffles must be at least 1".into()));
    }
    crate::error::check_dim("test targets", test.len(), truth.len())?;
    let y_pool = pool.y()?;
    let smallest = train_size(fractions[0], pool.len());
    if smallest < 2 {
        return Err(Error::invalid(format!(
            "label fraction {} of {} pool rows leaves {smallest} training rows; need at least 2",
            fractions[0],
            pool.len()
        )));
    }
    let x_pool = pool.wz_matrix();
    let x_test = test.wz_matrix();
    let jobs: Vec<(usize, usize, usize)> = (0..baselines.len())
        .flat_map(|b| (0..fractions.len()).flat_map(move |f| (0..shuffles).map(move |s| (b, f, s))))
        .collect();
    let mses: Vec<f64> = jobs
        .par_iter()
        .map(|&(b, f, s)| {
            let order = shuffled_indices(pool.len(), seeds::derive_path(seed, &[1, s as u64]));
            let idx = &order[..train_size(fractions[f], pool.len())];
            let y: Vec<f64> = idx.iter().map(|&i| y_pool[i]).collect();
            let spec = baselines[b].with_seed(seeds::derive_path(seed, &[2, b as u64, f as u64, s as u64]));
            let model = regress::fit(&spec, &x_pool.select_rows(idx), &y)?;
            Ok(mean_squared_error(&model.predict(&x_test)?, truth))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(baselines.len() * fractions.len());
    for (b, spec) in baselines.iter().enumerate() {
        for (f, &fraction) in fractions.iter().enumerate() {
            let start = (b * fractions.len() + f) * shuffles;
            rows.push(ResultRow {
                method: spec.name().to_string(),
                label_fraction: fraction,
                trial,
                mse: stable_mean(&mses[start..start + shuffles]),
            });
        }
    }
    Ok(rows)
}

/// The method's MSE on `test`: fit on historic data, adapt stage one on the
/// unlabeled new-regime rows, predict `truth`.
pub fn run_method(
    historic: &[Dataset],
    new_unlabeled: &Dataset,
    test: &Dataset,
    truth: &[f64],
    lib: &FeatureLibrary,
    cfg: &PipelineConfig,
) -> Result<f64> {
    let pipeline = Pipeline::fit(historic, lib, cfg)?;
    run_fitted_method(&pipeline, new_unlabeled, test, truth)
}

pub fn run_fitted_method(pipeline: &Pipeline, new_unlabeled: &Dataset, test: &Dataset, truth: &[f64]) -> Result<f64> {
    crate::error::check_dim("test targets", test.len(), truth.len())?;
    let adapted = pipeline.adapt(new_unlabeled)?;
    let pred = adapted.predict(test)?;
    let mse = mean_squared_error(&pred, truth);
    if !mse.is_finite() {
        return Err(Error::Numeric("method produced a non-finite MSE".into()));
    }
    Ok(mse)
}

/// One trial's data.
pub struct TrialData {
    pub historic: Vec<Dataset>,
    pub new_regime: Dataset,
    pub lib: FeatureLibrary,
    pub generator: Option<ImgPert>,
    pub new_w: Option<f64>,
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    seeds::derive(master, trial as u64)
}

/// Generates or loads the data of one trial.
pub fn trial_data(cfg: &ExperimentConfig, trial: usize) -> Result<TrialData> {
    let seed = trial_seed(cfg.seed, trial);
    match &cfg.source {
        DataSource::ImgPert { generator, new_n, new_w } => {
            let mut gcfg = generator.clone();
            gcfg.outcome = match cfg.theta_mode {
                ThetaMode::Fixed => generator.outcome.clone(),
                ThetaMode::Sampled => simgen::sample_theta_trial(ThetaMode::Sampled, seeds::derive(seed, 1)),
            };
            gcfg.seed = seeds::derive(seed, 2);
            let gen = ImgPert::new(gcfg)?;
            let historic = gen.generate(RegimeId(0), None)?;
            let mut new_gen = gen.clone();
            new_gen.cfg.n = *new_n;
            let new_regime = new_gen.generate(RegimeId(1), Some(*new_w))?;
            Ok(TrialData {
                historic: vec![historic],
                new_regime,
                lib: gen.library(),
                generator: Some(gen),
                new_w: Some(*new_w),
            })
        }
        DataSource::Csv { historic, new_regime, features } => {
            let historic = historic
                .iter()
                .map(dataset::load_csv_auto)
                .collect::<Result<Vec<_>>>()?;
            let new_regime = dataset::load_csv_auto(new_regime)?;
            let lib = FeatureLibrary::from_manifest(&FeatureManifest::load(features)?)?;
            Ok(TrialData { historic, new_regime, lib, generator: None, new_w: None })
        }
    }
}

/// Training pool and test set of the new regime for one trial.
pub fn split_new_regime(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !d.is_labeled() {
        return Err(Error::Contract("the new-regime evaluation data must be labeled".into()));
    }
    let idx = shuffled_indices(d.len(), seed);
    let n_pool = train_size(1.0 - test_fraction, d.len());
    if n_pool == 0 || n_pool == d.len() {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} leaves an empty pool or test set for {} rows",
            d.len()
        )));
    }
    Ok((d.subset(&idx[..n_pool]), d.subset(&idx[n_pool..])))
}

fn mse_truth(cfg: &ExperimentConfig, data: &TrialData, test: &Dataset) -> Result<Vec<f64>> {
    match (cfg.target, &data.generator) {
        (MseTarget::Observed, _) => test.y(),
        (MseTarget::CausalEffect, Some(gen)) => {
            let w = data.new_w.expect("generator sources carry w");
            test.samples().iter().map(|s| gen.causal_effect(w, &s.z)).collect()
        }
        (MseTarget::CausalEffect, None) => Err(Error::Config("the causal-effect target needs a generator source".into())),
    }
}

/// Result of one trial.
pub struct TrialOutcome {
    pub rows: Vec<ResultRow>,
    pub pipeline: Pipeline,
    pub theta: Vec<f64>,
}

pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialOutcome> {
    let seed = trial_seed(cfg.seed, trial);
    let data = trial_data(cfg, trial)?;
    let (pool, test) = split_new_regime(&data.new_regime, cfg.test_fraction, seeds::derive(seed, 3))?;
    let truth = mse_truth(cfg, &data, &test)?;
    let pcfg = PipelineConfig {
        seed: seeds::derive(seed, 4),
        ..cfg.pipeline_config()
    };
    let pipeline = Pipeline::fit(&data.historic, &data.lib, &pcfg)?;
    let method_mse = run_fitted_method(&pipeline, &pool.strip_labels(), &test, &truth)?;
    let mut rows: Vec<ResultRow> = cfg
        .fractions
        .iter()
        .map(|&f| ResultRow {
            method: METHOD_NAME.into(),
            label_fraction: f,
            trial,
            mse: method_mse,
        })
        .collect();
    rows.extend(run_baseline_curve(
        &pool,
        &test,
        &truth,
        &cfg.fractions,
        &cfg.baselines,
        cfg.shuffle_count(),
        seeds::derive(seed, 5),
        trial,
    )?);
    let theta = data
        .generator
        .as_ref()
        .map(|g| g.cfg.outcome.theta.clone())
        .unwrap_or_default();
    Ok(TrialOutcome { rows, pipeline, theta })
}

/// All trials with derived seeds, run concurrently.
pub fn run_theta_trials(cfg: &ExperimentConfig) -> Result<ResultTable> {
    Ok(run_trials(cfg)?.0)
}

fn run_trials(cfg: &ExperimentConfig) -> Result<(ResultTable, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let outcomes: Vec<(Vec<ResultRow>, Vec<f64>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t).map(|o| (o.rows, o.theta)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut thetas = Vec::new();
    for (r, th) in outcomes {
        rows.extend(r);
        thetas.push(th);
    }
    Ok((ResultTable { rows }.sorted(), thetas))
}

/// Mediator selection on the first trial's historic data, split in half.
pub fn run_mediation(cfg: &ExperimentConfig) -> Result<MediationReport> {
    let seed = trial_seed(cfg.seed, 0);
    let data = trial_data(cfg, 0)?;
    let pcfg = PipelineConfig {
        seed: seeds::derive(seed, 4),
        ..cfg.pipeline_config()
    };
    let pipeline = Pipeline::fit(&data.historic, &data.lib, &pcfg)?;
    let pooled = Dataset::pool(&data.historic)?;
    let idx = shuffled_indices(pooled.len(), seeds::derive(seed, 6));
    let half = pooled.len() / 2;
    let mcfg = MediationConfig {
        learner: pcfg.stage_one.with_seed(seeds::derive(seed, 7)),
        alpha: cfg.alpha,
        z_columns: pcfg.z_columns.clone(),
        ..MediationConfig::default()
    };
    select_mediators(
        &pipeline.response,
        &data.lib,
        &pooled.subset(&idx[..half]),
        &pooled.subset(&idx[half..]),
        &mcfg,
    )
}

pub struct Evaluation {
    pub table: ResultTable,
    pub mediation: Option<MediationReport>,
    pub thetas: Vec<Vec<f64>>,
}

/// The full protocol: all trials, optional mediation, and the report.
pub fn evaluate(cfg: &ExperimentConfig, outdir: Option<&Path>) -> Result<Evaluation> {
    let (table, thetas) = run_trials(cfg)?;
    let mediation = if cfg.mediation { Some(run_mediation(cfg)?) } else { None };
    let dir = outdir.map(Path::to_path_buf).or_else(|| cfg.output_dir.clone());
    if let Some(dir) = dir {
        emit_report(&table, mediation.as_ref(), &dir)?;
        write_file(&dir.join("config.json"), &(serde_json::to_string_pretty(cfg)? + "\n"))?;
        if thetas.iter().any(|t| !t.is_empty()) {
            let mut text = String::from("trial,theta\n");
            for (t, th) in thetas.iter().enumerate() {
                let cells: Vec<String> = th.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(text, "{t},{}", cells.join(";"));
            }
            write_file(&dir.join("thetas.csv"), &text)?;
        }
    }
    Ok(Evaluation { table, mediation, thetas })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes results.csv, summary.csv, curves.svg, and mediation.csv when a
/// report is given.
pub fn emit_report(table: &ResultTable, mediation: Option<&MediationReport>, outdir: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::invalid("cannot report an empty result table"));
    }
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    write_file(&outdir.join("results.csv"), &table.to_csv())?;
    write_file(&outdir.join("summary.csv"), &table.summary_csv())?;
    write_file(&outdir.join("curves.svg"), &render_svg(table))?;
    if let Some(m) = mediation {
        m.save(outdir)?;
    }
    Ok(())
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// MSE against label fraction, one polyline per method with standard-error
/// bars, on a fixed 800×500 canvas.
pub fn render_svg(table: &ResultTable) -> String {
    let (w, h) = (800.0, 500.0);
    let (left, right, top, bottom) = (80.0, 160.0, 30.0, 60.0);
    let aggs = table.aggregates();
    let x_min = aggs.iter().map(|a| a.label_fraction).fold(f64::INFINITY, f64::min).min(0.0);
    let x_max = aggs.iter().map(|a| a.label_fraction).fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let y_max = aggs
        .iter()
        .map(|a| a.mean + a.std_error)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.05;
    let px = |x: f64| left + (x - x_min) / (x_max - x_min) * (w - left - right);
    let py = |y: f64| h - bottom - y / y_max * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (px(x_min), py(0.0), px(x_max), py(y_max));
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#);
    for k in 0..=5 {
        let fx = x_min + (x_max - x_min) * k as f64 / 5.0;
        let fy = y_max * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{fx:.1}</text>"#,
            px(fx),
            y0 + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{fy:.3}</text>"#,
            x0 - 6.0,
            py(fy) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">label fraction</text>"#,
        (x0 + x1) / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">MSE</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (m, method) in table.methods().iter().enumerate() {
        let colour = PALETTE[m % PALETTE.len()];
        let pts: Vec<&Aggregate> = aggs.iter().filter(|a| &a.method == method).collect();
        let coords: Vec<String> = pts
            .iter()
            .map(|a| format!("{:.2},{:.2}", px(a.label_fraction), py(a.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="method" data-method="{method}" fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        for a in &pts {
            if a.std_error > 0.0 {
                let x = px(a.label_fraction);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{colour}"/>"#,
                    py(a.mean - a.std_error),
                    py(a.mean + a.std_error)
                );
            }
        }
        let ly = top + 20.0 * m as f64;
        let lx = w - right + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{method}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}
