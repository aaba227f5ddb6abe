//! Command-line behaviour: outputs, overrides and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cplab_core::calibration::CalibrationScores;
use cplab_core::config::RunConfig;
use cplab_core::data::{load_dataset, save_dataset, split, DataFormat, SplitSpec};
use cplab_core::evaluation::{beta_coverage_check, coverage_study, CoverageStudy};
use cplab_core::{
    finite_sample_quantile, CalibratedPredictor, CalibrationMode, Dataset, DomainTag,
};
use serde_json::{json, Value};

fn cplab(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cplab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec(value).unwrap()).unwrap();
    path
}

fn synthetic() -> Value {
    json!({"n": 400, "n_classes": 5, "accuracy_target": 0.7, "feature_dim": 7, "seed": 13})
}

#[test]
fn generate_writes_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "data": {"synthetic": synthetic()},
            "score": {"kind": "aps", "domain": "probability"},
            "format": "csv"
        }),
    );
    let out = dir.path().join("gen");
    let o = cplab(&["generate"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let probs = load_dataset(
        &out.join("probabilities.csv"),
        DataFormat::Csv,
        DomainTag::Probability,
        None,
    )
    .unwrap();
    assert_eq!((probs.len(), probs.dim()), (400, 5));
    let feats = load_dataset(
        &out.join("features.csv"),
        DataFormat::Csv,
        DomainTag::Feature,
        Some(5),
    )
    .unwrap();
    assert_eq!(feats.dim(), 7);
    assert!(out.join("tail.json").is_file());
}

#[test]
fn invalid_accuracy_target_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "data": {"synthetic": {"n": 100, "n_classes": 4, "accuracy_target": 0.2, "seed": 1}},
            "score": {"kind": "aps", "domain": "probability"}
        }),
    );
    let o = cplab(&["generate"], &cfg, &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn config_domain_mismatch_is_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "data": {"synthetic": synthetic()},
            "score": {"kind": "label_distance", "domain": "logit"}
        }),
    );
    let o = cplab(&["calibrate"], &cfg, &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn calibrated_threshold_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let config = json!({
        "data": {"synthetic": synthetic()},
        "score": {"kind": "margin_distance", "domain": "logit"},
        "alpha": 0.2,
        "seed": 5
    });
    let cfg = write_config(dir.path(), "c.json", &config);
    let out = dir.path().join("o");
    assert!(cplab(&["calibrate", "--alpha", "0.15"], &cfg, &out)
        .status
        .success());
    let p = CalibratedPredictor::load(&out.join("predictor.json")).unwrap();
    assert_eq!(p.alpha(), 0.15);

    let run: RunConfig = serde_json::from_value(config).unwrap();
    let data = run.load_data().unwrap();
    let (calib, _) = split(
        data.pool().unwrap(),
        SplitSpec {
            calib_fraction: 0.5,
            seed: 5,
        },
    )
    .unwrap();
    let scores = CalibrationScores::compute(&calib, &run.score, None).unwrap();
    assert_eq!(
        p.threshold_for(0),
        finite_sample_quantile(scores.scores(), 0.15).unwrap()
    );
}

fn split_files(dir: &Path, calib: &Dataset, test: &Dataset) -> (PathBuf, PathBuf) {
    let c = dir.join("calib.cpmx");
    let t = dir.join("test.cpmx");
    save_dataset(calib, &c, DataFormat::Binary).unwrap();
    save_dataset(test, &t, DataFormat::Binary).unwrap();
    (c, t)
}

#[test]
fn mondrian_with_missing_class_fails() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.2, 0.7, 0.1],
        vec![0.6, 0.3, 0.1],
    ];
    let calib = Dataset::from_rows(&rows, vec![0, 1, 0], DomainTag::Probability, 3).unwrap();
    let (c, t) = split_files(dir.path(), &calib, &calib);
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "data": {"split": {"calib": c, "test": t, "n_classes": 3}},
            "score": {"kind": "aps", "domain": "probability"},
            "mode": "mondrian"
        }),
    );
    let o = cplab(&["calibrate"], &cfg, &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("class 2"));
}

#[test]
fn predict_on_empty_test_set_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.2, 0.7, 0.1],
        vec![0.1, 0.3, 0.6],
    ];
    let calib = Dataset::from_rows(&rows, vec![0, 1, 2], DomainTag::Probability, 3).unwrap();
    let empty = calib.subset(&[]);
    let (c, t) = split_files(dir.path(), &calib, &empty);
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "data": {"split": {"calib": c, "test": t}},
            "score": {"kind": "label_distance", "domain": "probability"},
            "alpha": 0.5
        }),
    );
    let out = dir.path().join("o");
    let o = cplab(&["predict"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(out.join("predictions.csv")).unwrap(),
        "row,classes\n"
    );
}

#[test]
fn predict_with_a_predictor_from_another_domain_fails() {
    let dir = tempfile::tempdir().unwrap();
    let base = json!({
        "data": {"synthetic": synthetic()},
        "score": {"kind": "aps", "domain": "logit"}
    });
    let cfg = write_config(dir.path(), "a.json", &base);
    let first = dir.path().join("first");
    assert!(cplab(&["calibrate"], &cfg, &first).status.success());

    let mut other = base.clone();
    other["score"]["domain"] = json!("probability");
    other["predictor"] = json!(first.join("predictor.json"));
    let cfg = write_config(dir.path(), "b.json", &other);
    let o = cplab(&["predict"], &cfg, &dir.path().join("second"));
    assert_eq!(o.status.code(), Some(1));

    let mut same = base;
    same["predictor"] = json!(first.join("predictor.json"));
    let cfg = write_config(dir.path(), "c.json", &same);
    let out = dir.path().join("third");
    assert!(cplab(&["predict"], &cfg, &out).status.success());
    let csv = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
    for line in csv.lines().skip(1) {
        let classes = line.split(',').nth(1).unwrap();
        let parsed: Vec<usize> = classes
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().unwrap())
            .collect();
        assert!(parsed.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn sweep_with_one_repetition_matches_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "data": {"synthetic": synthetic()},
            "score": {"kind": "saps", "domain": "probability"},
            "repetitions": 1,
            "grid_points": 8,
            "seed": 3
        }),
    );
    let out = dir.path().join("o");
    assert!(cplab(&["evaluate"], &cfg, &out).status.success());
    assert!(cplab(&["sweep"], &cfg, &out).status.success());
    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let sweep: Value =
        serde_json::from_slice(&std::fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["median"], report);
    let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert!(curve.starts_with("alpha,mean_set_size\n"));
    assert_eq!(curve.lines().count(), 9);
    assert_eq!(
        curve,
        std::fs::read_to_string(out.join("curves/rep_000.csv")).unwrap()
    );
}

#[test]
fn verify_coverage_reports_beta_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let config = json!({
        "data": {"synthetic": {"n": 599, "n_classes": 5, "accuracy_target": 0.7, "seed": 2}},
        "score": {"kind": "aps", "domain": "probability"},
        "seed": 8,
        "coverage": {"n_calib": 99, "test_size": 500, "trials": 100, "alphas": [0.1]}
    });
    let cfg = write_config(dir.path(), "c.json", &config);
    let out = dir.path().join("o");
    let o = cplab(&["verify-coverage"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("a 90 b 10"), "{stdout}");

    let written: Value =
        serde_json::from_slice(&std::fs::read(out.join("coverage.json")).unwrap()).unwrap();
    let run: RunConfig = serde_json::from_value(config).unwrap();
    let spec = match &run.data {
        cplab_core::config::DataSource::Synthetic(s) => s.clone(),
        _ => unreachable!(),
    };
    let direct = beta_coverage_check(99, 0.1, 100, 500, &spec, &run.score, 8).unwrap();
    assert_eq!(written[0], serde_json::to_value(&direct).unwrap());

    let data = run.load_data().unwrap();
    let study = coverage_study(&CoverageStudy {
        pool: data.pool().unwrap(),
        tail: None,
        score: &run.score,
        mode: CalibrationMode::Marginal,
        n_calib: 99,
        test_size: 500,
        trials: 100,
        alphas: &[0.1],
        seed: 8,
    })
    .unwrap();
    assert_eq!(study[0], direct);
}

#[test]
fn malformed_config_and_bad_threads_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(
        cplab(&["evaluate"], &cfg, &dir.path().join("o"))
            .status
            .code(),
        Some(1)
    );

    let cfg = write_config(
        dir.path(),
        "d.json",
        &json!({
            "data": {"synthetic": synthetic()},
            "score": {"kind": "aps", "domain": "probability"}
        }),
    );
    let o = Command::new(env!("CARGO_BIN_EXE_cplab"))
        .args(["generate", "--config"])
        .arg(&cfg)
        .env("CPLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
