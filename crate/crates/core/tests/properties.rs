use pragmed::dataset::{load_csv_auto, save_csv, Dataset, RegimeId, Sample, Schema};
use pragmed::estimator::{Pipeline, PipelineConfig};
use pragmed::harness::{self, ExperimentConfig, ResultRow, ResultTable};
use pragmed::matrix::{mean_squared_error, variance};
use pragmed::regress::{ForestParams, RegressorSpec};
use pragmed::seeds;
use pragmed::simgen::{LinearGaussianConfig, LinearGaussianTruth};
use pragmed::stats::{holm_adjust, wilcoxon_rank_sum_one_sided, wilcoxon_signed_rank_one_sided};
use proptest::prelude::*;

fn small_forest() -> RegressorSpec {
    RegressorSpec::Forest(ForestParams {
        n_trees: 20,
        ..ForestParams::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn holm_is_bounded_and_order_preserving(p in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let q = holm_adjust(&p).unwrap();
        for i in 0..p.len() {
            prop_assert!(q[i] >= p[i] && q[i] <= 1.0);
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    prop_assert!(q[i] <= q[j]);
                }
            }
        }
    }

    #[test]
    fn wilcoxon_p_values_are_probabilities(
        a in prop::collection::vec(-5i32..5, 1..30),
        b in prop::collection::vec(-5i32..5, 1..30),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let r = wilcoxon_rank_sum_one_sided(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        let k = a.len().min(b.len());
        let s = wilcoxon_signed_rank_one_sided(&a[..k], &b[..k]).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.p_value));
        // the two one-sided exact tails overlap in the observed value
        let back = wilcoxon_signed_rank_one_sided(&b[..k], &a[..k]).unwrap();
        if s.exact {
            prop_assert!(s.p_value + back.p_value >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact(
        rows in prop::collection::vec((0u32..3, prop::collection::vec(-1e6f64..1e6, 4), -1e3f64..1e3), 1..20)
    ) {
        let samples: Vec<Sample> = rows
            .iter()
            .enumerate()
            .map(|(i, (r, v, y))| Sample {
                id: i as u64,
                regime: RegimeId(*r),
                w: vec![v[0]],
                z: vec![v[1]],
                x: vec![v[2], v[3] / 7.0],
                y: Some(*y),
            })
            .collect();
        let d = Dataset::new(Schema::new(1, 1, 2, true), samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&d, &path).unwrap();
        let back = load_csv_auto(&path).unwrap();
        prop_assert_eq!(back.samples(), d.samples());
    }
}

fn linear_testbed(seed: u64, n: usize, theta: Option<Vec<f64>>) -> (LinearGaussianTruth, Dataset) {
    let mut cfg = LinearGaussianConfig::new(1, 2, 4, 3, n, seed);
    cfg.theta = theta;
    let truth = LinearGaussianTruth::draw(&cfg).unwrap();
    let data = truth.sample(n, RegimeId(0), None, seed).unwrap();
    (truth, data)
}

/// `Var(y | w, z)`: the outcome noise plus the feature noise passed
/// through the outcome weights.
fn conditional_noise_variance(t: &LinearGaussianTruth) -> f64 {
    let dx = t.d.ncols();
    let loading: f64 = (0..dx)
        .map(|k| {
            let c: f64 = t.theta.iter().enumerate().map(|(i, th)| th * t.d.get(i, k)).sum();
            c * c
        })
        .sum();
    t.noise_x * t.noise_x * loading + t.noise_y * t.noise_y
}

#[test]
fn feature_permutation_permutes_theta_and_keeps_predictions() {
    let (truth, data) = linear_testbed(3, 600, None);
    let lib = truth.library();
    let cfg = PipelineConfig {
        stage_one: small_forest(),
        seed: 9,
        ..PipelineConfig::default()
    };
    let p = Pipeline::fit(&[data.clone()], &lib, &cfg).unwrap();
    let order = [2, 0, 1];
    let q = Pipeline::fit(&[data.clone()], &lib.permuted(&order).unwrap(), &cfg).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert_eq!(q.response.theta[k].to_bits(), p.response.theta[i].to_bits());
    }
    let new = truth.sample(200, RegimeId(1), Some(&[1.0]), 77).unwrap().strip_labels();
    let a = p.adapt(&new).unwrap().predict(&new).unwrap();
    let b = q.adapt(&new).unwrap().predict(&new).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn method_with_linear_stage_one_is_near_the_noise_floor() {
    let (truth, historic) = linear_testbed(11, 4000, None);
    let new = truth.sample(2000, RegimeId(1), Some(&[0.5]), 12).unwrap();
    let (pool, test) = harness::split_new_regime(&new, 0.5, 1).unwrap();
    let cfg = PipelineConfig {
        stage_one: RegressorSpec::Ols,
        ..PipelineConfig::default()
    };
    let mse = harness::run_method(&[historic], &pool.strip_labels(), &test, &test.y().unwrap(), &truth.library(), &cfg).unwrap();
    let floor = conditional_noise_variance(&truth);
    assert!(mse <= 2.0 * floor, "mse {mse} vs noise variance {floor}");
}

#[test]
fn zero_theta_method_mse_is_the_noise_variance() {
    let (truth, historic) = linear_testbed(13, 3000, Some(vec![0.0; 3]));
    let new = truth.sample(2000, RegimeId(1), Some(&[0.5]), 14).unwrap();
    let (pool, test) = harness::split_new_regime(&new, 0.5, 1).unwrap();
    let cfg = PipelineConfig {
        stage_one: RegressorSpec::Ols,
        ..PipelineConfig::default()
    };
    let y = test.y().unwrap();
    let mse = harness::run_method(&[historic], &pool.strip_labels(), &test, &y, &truth.library(), &cfg).unwrap();
    let floor = truth.noise_y * truth.noise_y;
    assert!((mse - floor).abs() < 0.2 * floor, "mse {mse} vs {floor}");
}

#[test]
fn baseline_curve_bookkeeping_and_accuracy() {
    let (truth, data) = linear_testbed(21, 1200, None);
    let (pool, test) = harness::split_new_regime(&data, 0.5, 2).unwrap();
    let y = test.y().unwrap();
    let baselines = vec![RegressorSpec::lasso_cv(), small_forest()];
    let fractions = vec![0.1, 0.5, 1.0];
    let rows = harness::run_baseline_curve(&pool, &test, &y, &fractions, &baselines, 2, 5, 0).unwrap();
    assert_eq!(rows.len(), fractions.len() * baselines.len());
    assert!(rows.iter().all(|r| r.mse >= 0.0));
    let lasso_full = rows.iter().find(|r| r.method == "lasso" && r.label_fraction == 1.0).unwrap();
    let floor = conditional_noise_variance(&truth);
    assert!(lasso_full.mse <= 2.0 * floor, "{} vs {floor}", lasso_full.mse);

    // too few training rows
    assert!(harness::run_baseline_curve(&pool.subset(&[0, 1, 2]), &test, &y, &[0.1], &baselines, 1, 5, 0).is_err());
    assert!(harness::run_baseline_curve(&pool, &test, &y, &[0.1], &[], 1, 5, 0).is_err());
}

#[test]
fn constant_outcome_baselines_do_not_exceed_its_variance() {
    let (_, data) = linear_testbed(23, 400, None);
    let samples: Vec<Sample> = data
        .samples()
        .iter()
        .map(|s| Sample { y: Some(2.5), ..s.clone() })
        .collect();
    let d = Dataset::new(data.schema().clone(), samples).unwrap();
    let (pool, test) = harness::split_new_regime(&d, 0.5, 3).unwrap();
    let y = test.y().unwrap();
    let rows = harness::run_baseline_curve(
        &pool,
        &test,
        &y,
        &[0.2, 1.0],
        &[RegressorSpec::lasso_cv(), small_forest(), RegressorSpec::gboost()],
        1,
        1,
        0,
    )
    .unwrap();
    let v = variance(&y);
    assert!(rows.iter().all(|r| r.mse <= v + 1e-12), "{rows:?}");
}

#[test]
fn baseline_error_does_not_grow_with_labels() {
    let mut at_01 = Vec::new();
    let mut at_10 = Vec::new();
    for t in 0..10u64 {
        let (_, data) = linear_testbed(100 + t, 800, None);
        let (pool, test) = harness::split_new_regime(&data, 0.5, t).unwrap();
        let y = test.y().unwrap();
        let rows = harness::run_baseline_curve(&pool, &test, &y, &[0.1, 1.0], &[small_forest()], 1, t, t as usize).unwrap();
        at_01.push(rows[0].mse);
        at_10.push(rows[1].mse);
    }
    let med = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[4] + v[5]) / 2.0
    };
    let (m10, m01) = (med(at_10.clone()), med(at_01.clone()));
    assert!(m10 <= m01, "{at_10:?} vs {at_01:?}");
}

#[test]
fn one_trial_aggregates_equal_the_rows() {
    let rows: Vec<ResultRow> = [("a", 0.1, 0.5), ("a", 0.2, 0.25), ("b", 0.1, 1.5)]
        .iter()
        .map(|(m, f, v)| ResultRow { method: m.to_string(), label_fraction: *f, trial: 0, mse: *v })
        .collect();
    let t = ResultTable { rows: rows.clone() };
    for r in &rows {
        let a = t.aggregate(&r.method, r.label_fraction).unwrap();
        assert_eq!(a.mean, r.mse);
        assert_eq!(a.std_error, 0.0);
    }
}

#[test]
fn standard_errors_shrink_with_trials() {
    // resampled MSE-like values with a fixed spread
    let table = |trials: usize| ResultTable {
        rows: (0..trials)
            .map(|t| {
                let mut rng = seeds::rng(seeds::derive(4, t as u64));
                let v: f64 = rand::Rng::random_range(&mut rng, 0.0..1.0);
                ResultRow { method: "m".into(), label_fraction: 0.5, trial: t, mse: v }
            })
            .collect(),
    };
    let se25 = table(25).aggregate("m", 0.5).unwrap().std_error;
    let se100 = table(100).aggregate("m", 0.5).unwrap().std_error;
    let ratio = se25 / se100;
    assert!((1.4..2.8).contains(&ratio), "ratio {ratio}");
}

#[test]
fn report_files_and_determinism() {
    let cfg = ExperimentConfig {
        source: harness::DataSource::ImgPert {
            generator: pragmed::simgen::ImgPertConfig { n: 800, ..Default::default() },
            new_n: 200,
            new_w: 5.0,
        },
        pipeline: Some(PipelineConfig {
            stage_one: small_forest(),
            z_columns: Some(vec![pragmed::simgen::PATTERN_COLUMN]),
            ..PipelineConfig::default()
        }),
        baselines: vec![RegressorSpec::lasso_cv(), small_forest()],
        fractions: vec![0.2, 0.6, 1.0],
        trials: 2,
        shuffles: Some(1),
        target: harness::MseTarget::CausalEffect,
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let ev = harness::evaluate(&cfg, Some(dir.path())).unwrap();
    for f in ["results.csv", "summary.csv", "curves.svg", "mediation.csv", "config.json", "thetas.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3 * 3);
    let svg = std::fs::read_to_string(dir.path().join("curves.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    let again = harness::evaluate(&cfg, None).unwrap();
    assert_eq!(again.table.to_csv(), ev.table.to_csv());
    let parsed = ResultTable::from_csv(&std::fs::read_to_string(dir.path().join("results.csv")).unwrap()).unwrap();
    assert_eq!(parsed, ev.table);
    // method rows are flat across fractions
    let m: Vec<f64> = ev.table.rows.iter().filter(|r| r.method == "two_stage" && r.trial == 0).map(|r| r.mse).collect();
    assert!(m.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()));
    assert!(mean_squared_error(&m, &m) == 0.0);
}

#[test]
fn documented_config_examples_parse() {
    let exp: ExperimentConfig = serde_json::from_str(
        r#"{
          "source": {"kind": "img_pert", "generator": {"n": 10000}, "new_n": 2000, "new_w": 5.0},
          "pipeline": {"stage_one": {"kind": "forest", "n_trees": 100}, "z_columns": [100],
                       "lambda_grid": {"kind": "fixed", "values": [0.1, 0.2]}},
          "baselines": [{"kind": "lasso"}, {"kind": "forest"}, {"kind": "gboost"}],
          "trials": 100, "theta_mode": "fixed", "shuffles": 10, "test_fraction": 0.5,
          "target": "observed", "alpha": 0.01, "mediation": true, "seed": 0
        }"#,
    )
    .unwrap();
    exp.validate().unwrap();
    let sim: pragmed::cli::SimulateConfig = serde_json::from_str(
        r#"{"generator": {"location": {"kind": "affine", "scale": 0.5, "offset": [0, 0]},
            "outcome": {"theta0": 0.0, "theta": [0.7, 0, 0, -0.5], "noise_std": 0.1}},
            "new_n": 2000, "new_w": 5.0, "theta_mode": "fixed"}"#,
    )
    .unwrap();
    assert_eq!(sim.generator, pragmed::simgen::ImgPertConfig::default());
    let m: pragmed::features::FeatureManifest = serde_json::from_str(
        r#"{"version": 1, "conv_seed": 42, "features": [
            {"name": "phi1", "kind": "convolution", "quadrant": 0, "pattern_column": 100},
            {"name": "size", "kind": "builtin", "builtin": "x", "index": 3},
            {"name": "mix", "kind": "builtin", "builtin": "linear", "weights": [0.5, -1.0]},
            {"name": "inter", "kind": "product",
             "x_factor": {"kind": "builtin", "builtin": "x", "index": 0},
             "z_factor": {"kind": "builtin", "builtin": "z", "index": 1}}]}"#,
    )
    .unwrap();
    assert_eq!(pragmed::features::FeatureLibrary::from_manifest(&m).unwrap().len(), 4);
}
