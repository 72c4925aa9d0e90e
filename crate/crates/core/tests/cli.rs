use std::path::Path;
use std::process::Command;

fn pragmed(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_pragmed"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(pragmed(&["no-such-command"]), 2);

    let bad = d.join("bad.json");
    std::fs::write(&bad, r#"{"trials": 0}"#).unwrap();
    assert_eq!(pragmed(&["evaluate", "--config", s(&bad), "--out", s(&d.join("r"))]), 2);
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(pragmed(&["evaluate", "--config", s(&bad), "--out", s(&d.join("r"))]), 2);

    let sim = d.join("sim.json");
    std::fs::write(&sim, r#"{"generator": {"n": 300}, "new_n": 60}"#).unwrap();
    let data = d.join("data");
    assert_eq!(pragmed(&["simulate", "--config", s(&sim), "--out", s(&data), "--seed", "4"]), 0);
    let model = d.join("model");
    assert_eq!(
        pragmed(&[
            "fit",
            "--historic",
            s(&data.join("historic.csv")),
            "--features",
            s(&data.join("features.json")),
            "--z-columns",
            "100",
            "--out",
            s(&model),
        ]),
        0
    );
    // labeled input to adapt is a data-contract error
    assert_eq!(
        pragmed(&["adapt", "--model", s(&model), "--unlabeled", s(&data.join("new_regime.csv")), "--out", s(&d.join("m2"))]),
        3
    );
    // ragged CSV
    let broken = d.join("broken.csv");
    std::fs::write(&broken, "regime,w0,z0,x0,y\n0,1,2\n").unwrap();
    assert_eq!(
        pragmed(&["fit", "--historic", s(&broken), "--features", s(&data.join("features.json")), "--out", s(&d.join("m3"))]),
        3
    );
    // train and test overlap
    let h = data.join("historic.csv");
    assert_eq!(
        pragmed(&["mediate", "--model", s(&model), "--train", s(&h), "--test", s(&h), "--out", s(&d.join("rep"))]),
        3
    );
}

#[test]
fn simulate_fit_adapt_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = d.join("sim.json");
    std::fs::write(&sim, r#"{"generator": {"n": 400}, "new_n": 100}"#).unwrap();
    let data = d.join("data");
    assert_eq!(pragmed(&["simulate", "--config", s(&sim), "--out", s(&data)]), 0);
    for f in ["historic.csv", "new_regime.csv", "historic.provenance.json", "new_regime.provenance.json", "features.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let model = d.join("model");
    let hist = data.join("historic.csv");
    let feats = data.join("features.json");
    let args = ["fit", "--historic", s(&hist), "--features", s(&feats), "--z-columns", "100", "--out", s(&model)];
    assert_eq!(pragmed(&args), 0);

    let new = pragmed::dataset::load_csv_auto(data.join("new_regime.csv")).unwrap();
    let unlabeled = d.join("new_u.csv");
    pragmed::dataset::save_csv(&new.strip_labels(), &unlabeled).unwrap();
    let adapted = d.join("adapted");
    assert_eq!(pragmed(&["adapt", "--model", s(&model), "--unlabeled", s(&unlabeled), "--out", s(&adapted)]), 0);
    let out = d.join("yhat.csv");
    assert_eq!(pragmed(&["predict", "--model", s(&adapted), "--input", s(&unlabeled), "--out", s(&out)]), 0);

    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + new.len());
    let p = pragmed::estimator::Pipeline::load(&adapted).unwrap();
    let expected = p.predict(&new).unwrap();
    for (line, e) in text.lines().skip(1).zip(expected) {
        assert_eq!(line.parse::<f64>().unwrap(), e);
    }
}
