use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use faultprone::synthetic::{write_dataset, SyntheticPaths, SyntheticSpec};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_faultprone"));
    c.env("RUST_LOG", "warn");
    c
}

fn data(dir: &Path) -> SyntheticPaths {
    write_dataset(&dir.join("data"), &SyntheticSpec::default()).unwrap()
}

/// A small, fast configuration over the synthetic tables.
fn config(dir: &Path, paths: &SyntheticPaths) -> PathBuf {
    let p = dir.join("run.toml");
    let text = format!(
        r#"issues = "{}"
measures = "{}"
labels = "{}"
rule_metadata = "{}"
models = ["random_forest", "xgb_like", "fcnn"]
folds = 3
window = 4
forest_trees = 10
boosting_stages = 10
epochs = 2
batch_size = 32
network_width = "desk"
importance_repeats = 2
min_importance_auc = 0.0
"#,
        paths.issues.display(),
        paths.measures.display(),
        paths.labels.display(),
        paths.rule_metadata.display()
    );
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &data(dir.path()));
    let out = dir.path().join("out");
    assert_ok(&run(&["run"], &cfg, &out));
    for f in [
        "config.json",
        "dataset.json",
        "features/snapshot.bin",
        "features/windowed.bin",
        "models/random_forest.json",
        "models/fcnn.json",
        "reports/xgb_like.json",
        "roc/fcnn.csv",
        "comparison.csv",
        "comparison.md",
        "roc.svg",
        "importance/random_forest.json",
        "importance.csv",
        "importance_top.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(!out.join("FAILED").exists());
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(table.starts_with("metric,RandomForest_mean,RandomForest_stdev,xgb-like_mean"));
    assert_eq!(table.lines().count(), 9);
}

#[test]
fn featurize_without_dataset_fails_with_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &data(dir.path()));
    let out = dir.path().join("out");
    let o = run(&["featurize"], &cfg, &out);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("not found") && err.contains("dataset.json"), "{err}");
    let marker = std::fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.contains("featurize"));
}

#[test]
fn stages_match_single_run_and_report_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &data(dir.path()));
    let whole = dir.path().join("whole");
    let staged = dir.path().join("staged");
    assert_ok(&run(&["run"], &cfg, &whole));
    for stage in ["ingest", "featurize", "train", "evaluate", "importance", "report"] {
        assert_ok(&run(&[stage], &cfg, &staged));
    }
    let manifest = |d: &Path| std::fs::read(d.join("manifest.json")).unwrap();
    assert_eq!(manifest(&whole), manifest(&staged));

    std::fs::remove_file(staged.join("comparison.md")).unwrap();
    std::fs::remove_file(staged.join("roc.svg")).unwrap();
    assert_ok(&run(&["report"], &cfg, &staged));
    assert_eq!(
        std::fs::read(whole.join("comparison.md")).unwrap(),
        std::fs::read(staged.join("comparison.md")).unwrap()
    );
    assert_eq!(manifest(&whole), manifest(&staged));
}

#[test]
fn deterministic_flag_gives_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &data(dir.path()));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_ok(&run(&["run"], &cfg, &a));
    assert_ok(&run(&["run", "--deterministic"], &cfg, &b));
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn stale_features_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let paths = data(dir.path());
    let cfg = config(dir.path(), &paths);
    let out = dir.path().join("out");
    assert_ok(&run(&["ingest"], &cfg, &out));
    assert_ok(&run(&["featurize"], &cfg, &out));
    // An uncategorized id drops the rule from the catalog.
    std::fs::write(
        &paths.issues,
        std::fs::read_to_string(&paths.issues)
            .unwrap()
            .lines()
            .map(|l| l.replace(",squid:S1000,", ",legacy1000,") + "\n")
            .collect::<String>(),
    )
    .unwrap();
    assert_ok(&run(&["ingest"], &cfg, &out));
    let o = run(&["train"], &cfg, &out);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("rerun `featurize`"), "{err}");
}

#[test]
fn szz_labels_feed_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let history = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/history5.jsonl");
    let out = dir.path().join("out");
    let o = bin().arg("szz").arg("--history").arg(&history).arg("--out").arg(&out).output().unwrap();
    assert_ok(&o);
    let labels = faultprone::ingest::load_labels(&out.join("labels.csv")).unwrap();
    assert!(labels.iter().any(|l| l.inducing));
}

#[test]
fn bad_flags_are_rejected() {
    let o = bin().args(["run", "--models", "svm"]).output().unwrap();
    assert!(!o.status.success());
    let o = bin().args(["run", "--folds", "1", "--out"]).arg(tempfile::tempdir().unwrap().path()).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("folds"));
}
