//! Command-line interface. Every subcommand reads and writes plain files:
//! datasets as CSV, configs and models as JSON.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, RegimeId};
use crate::error::{Error, Result};
use crate::estimator::{Pipeline, PipelineConfig};
use crate::features::{FeatureLibrary, FeatureManifest};
use crate::harness::{self, ExperimentConfig};
use crate::mediation::{select_mediators, MediationConfig};
use crate::regress::RegressorSpec;
use crate::simgen::{self, ImgPert, ImgPertConfig, Provenance, ThetaMode};
use crate::stats::TestMethod;

#[derive(Debug, Parser)]
#[command(name = "pragmed", version, about = "Causal responses to crude interventions via pragmatic mediators")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Master seed; overrides the seed in any config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the image-perturbation benchmark: historic and new-regime CSVs,
    /// provenance sidecars and the feature manifest.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit stage one and stage two on historic data.
    Fit {
        #[arg(long, num_args = 1.., required = true)]
        historic: Vec<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        /// Pipeline config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Columns of z used by stage one, e.g. `--z-columns 100`.
        #[arg(long, num_args = 1..)]
        z_columns: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refit stage one on unlabeled new-regime data.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict E[Y | do(w), z] for each row of a CSV with w and z columns.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select mediators and partition the feature library.
    Mediate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = crate::mediation::DEFAULT_ALPHA)]
        alpha: f64,
        /// Residual-model learner; the model's stage-one learner by default.
        #[arg(long, value_enum)]
        learner: Option<LearnerArg>,
        #[arg(long, value_enum, default_value_t = TestArg::SignedRank)]
        test_method: TestArg,
        /// Marginal test of W (only valid when Z ⊥ W by design).
        #[arg(long)]
        marginal: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the label-fraction evaluation protocol.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the trial count of the config.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LearnerArg {
    Ols,
    Forest,
    Gboost,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TestArg {
    SignedRank,
    RankSum,
}

/// Config of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(default)]
    pub generator: ImgPertConfig,
    #[serde(default = "default_new_n")]
    pub new_n: usize,
    #[serde(default = "default_new_w")]
    pub new_w: f64,
    /// Draw θ from the sampled-trial distribution instead of the config.
    #[serde(default)]
    pub theta_mode: ThetaMode,
}

fn default_new_n() -> usize {
    simgen::NEW_REGIME_N
}
fn default_new_w() -> f64 {
    simgen::NEW_REGIME_W
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn log(verbose: bool, msg: impl AsRef<str>) {
    if verbose {
        eprintln!("{}", msg.as_ref());
    }
}

pub fn simulate(cfg: &SimulateConfig, out: &Path, verbose: bool) -> Result<()> {
    let mut gcfg = cfg.generator.clone();
    if cfg.theta_mode == ThetaMode::Sampled {
        gcfg.outcome = simgen::sample_theta_trial(ThetaMode::Sampled, crate::seeds::derive(gcfg.seed, 1));
    }
    let gen = ImgPert::new(gcfg)?;
    mkdir(out)?;
    let historic = gen.generate(RegimeId(0), None)?;
    log(verbose, format!("historic: {} rows", historic.len()));
    dataset::save_csv(&historic, out.join("historic.csv"))?;
    Provenance::for_imgpert(&gen, RegimeId(0), None)?.save(out.join("historic.provenance.json"))?;
    let mut new_gen = gen.clone();
    new_gen.cfg.n = cfg.new_n;
    let new = new_gen.generate(RegimeId(1), Some(cfg.new_w))?;
    log(verbose, format!("new regime (w = {}): {} rows", cfg.new_w, new.len()));
    dataset::save_csv(&new, out.join("new_regime.csv"))?;
    Provenance::for_imgpert(&new_gen, RegimeId(1), Some(cfg.new_w))?.save(out.join("new_regime.provenance.json"))?;
    gen.library().to_manifest().save(out.join("features.json"))
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Dataset>> {
    paths.iter().map(dataset::load_csv_auto).collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let Common { seed, threads, verbose } = cli.common;
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { config, out } => {
            let mut cfg: SimulateConfig = match config {
                Some(p) => read_json(&p)?,
                None => serde_json::from_str("{}")?,
            };
            if let Some(s) = seed {
                cfg.generator.seed = s;
            }
            cfg.generator.validate().map_err(|e| Error::Config(e.to_string()))?;
            simulate(&cfg, &out, verbose)
        }
        Command::Fit { historic, features, config, z_columns, out } => {
            let mut cfg: PipelineConfig = match config {
                Some(p) => read_json(&p)?,
                None => PipelineConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if z_columns.is_some() {
                cfg.z_columns = z_columns;
            }
            let lib = FeatureLibrary::from_manifest(&FeatureManifest::load(&features)?)?;
            let data = load_all(&historic)?;
            log(verbose, format!("fitting on {} historic files", data.len()));
            let p = Pipeline::fit(&data, &lib, &cfg)?;
            log(verbose, format!("theta = {:?}, lambda = {}", p.response.theta, p.response.lambda_star));
            p.save(&out)
        }
        Command::Adapt { model, unlabeled, out } => {
            let p = Pipeline::load(&model)?;
            let data = dataset::load_csv_auto(&unlabeled)?;
            p.adapt(&data)?.save(&out)
        }
        Command::Predict { model, input, out } => {
            let p = Pipeline::load(&model)?;
            let data = dataset::load_csv_auto(&input)?;
            let pred = p.predict(&data)?;
            let mut text = String::from("yhat\n");
            for v in pred {
                text.push_str(&format!("{v:.16e}\n"));
            }
            std::fs::write(&out, text).map_err(|e| Error::io(&out, e))
        }
        Command::Mediate { model, train, test, alpha, learner, test_method, marginal, out } => {
            let p = Pipeline::load(&model)?;
            let lib = p.library()?;
            let learner = match learner {
                None => p.config.stage_one.clone(),
                Some(LearnerArg::Ols) => RegressorSpec::Ols,
                Some(LearnerArg::Forest) => RegressorSpec::forest(),
                Some(LearnerArg::Gboost) => RegressorSpec::gboost(),
            };
            let cfg = MediationConfig {
                learner: learner.with_seed(seed.unwrap_or(p.config.seed)),
                test: match test_method {
                    TestArg::SignedRank => TestMethod::SignedRank,
                    TestArg::RankSum => TestMethod::RankSum,
                },
                alpha,
                z_columns: p.config.z_columns.clone(),
                marginal,
            };
            let report = select_mediators(
                &p.response,
                &lib,
                &dataset::load_csv_auto(&train)?,
                &dataset::load_csv_auto(&test)?,
                &cfg,
            )?;
            log(verbose, report.to_text());
            report.save(&out)
        }
        Command::Evaluate { config, trials, out } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let ev = harness::evaluate(&cfg, Some(&out))?;
            if verbose {
                eprint!("{}", ev.table.summary_csv());
            }
            Ok(())
        }
    }
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
