//! Acceptance checks. Runs every criterion, prints one line each and exits
//! non-zero if any fails. Set `FAULTPRONE_TDD_DIR` to a directory holding
//! the Technical Debt Dataset exports to include the full-data run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use faultprone::eval::{self, confusion, cross_validate, metrics, roc_auc, ConfusionMatrix};
use faultprone::featurize::{
    stratified_folds, train_test_split, windowed_tensor, FeatureMatrix, FeatureSet, Samples, WindowedTensor,
};
use faultprone::importance::{permutation_importance, PermutationUnit};
use faultprone::ingest::{DatasetRow, JointDataset, RuleCatalog, DATASET_FORMAT, METRIC_NAMES};
use faultprone::model::Estimator;
use faultprone::neural::{
    build_fcnn, build_resnet, gradient_check, Architecture, LayerSpec, NetworkEstimator, NetworkPreset, NetworkSpec,
    Shortcut, TrainConfig,
};
use faultprone::pipeline::{ModelKind, NetworkWidth, Pipeline, Protocol, RunConfig};
use faultprone::synthetic::{write_dataset, SyntheticSpec};
use faultprone::szz::{identify_fix_commits, locate_inducing, parse_history, FixCommit, FixSet, SzzOptions};
use faultprone::trees::{BoostingParams, ForestParams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

type Check = Result<Outcome, Box<dyn std::error::Error>>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, ok: bool, detail: String) -> Outcome {
    let detail = format!("{detail}; {:.1}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs());
    verdict(ok && elapsed <= limit, detail)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- 1 ----------------------------------------------------------------

fn metric_formulas() -> Check {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut recount_ok = true;
    for _ in 0..1000 {
        let counts: [u64; 4] = std::array::from_fn(|_| if r.gen_bool(0.1) { 0 } else { r.gen_range(0..200) });
        let [tp, tn, fp, fn_] = counts;
        if tp + tn + fp + fn_ == 0 {
            continue;
        }
        // scores/labels realizing the matrix, shuffled
        let mut rows: Vec<(f64, bool)> = Vec::new();
        rows.extend((0..tp).map(|_| (r.gen_range(0.5..1.0), true)));
        rows.extend((0..fn_).map(|_| (r.gen_range(0.0..0.5), true)));
        rows.extend((0..fp).map(|_| (r.gen_range(0.5..1.0), false)));
        rows.extend((0..tn).map(|_| (r.gen_range(0.0..0.5), false)));
        rows.shuffle(&mut r);
        let scores: Vec<f64> = rows.iter().map(|x| x.0).collect();
        let labels: Vec<bool> = rows.iter().map(|x| x.1).collect();
        let cm = confusion(&scores, &labels, 0.5)?;
        recount_ok &= cm == ConfusionMatrix { tp, tn, fp, fn_ };
        let m = metrics(&cm, 0.5)?;
        let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
        let pct = |num: f64, den: f64| if den == 0.0 { 0.0 } else { 100.0 * num / den };
        let precision = pct(tp, tp + fp);
        let recall = pct(tp, tp + fn_);
        let expected = [
            ("precision", m.precision, precision),
            ("recall", m.recall, recall),
            ("f", m.f_measure, if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) }),
            ("mcc", m.mcc, {
                let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
                if den == 0.0 { 0.0 } else { 100.0 * (tp * tn - fp * fn_) / den }
            }),
            ("tnr", m.tnr, pct(tn, tn + fp)),
            ("fpr", m.fpr, pct(fp, fp + tn)),
            ("fnr", m.fnr, pct(fn_, fn_ + tp)),
        ];
        for (_, got, want) in expected {
            worst = worst.max((got - want).abs());
        }
    }
    Ok(within(
        start.elapsed(),
        Duration::from_secs(5),
        recount_ok && worst <= 1e-12,
        format!("1000 matrices, recount {}, max |diff| {worst:.2e}", if recount_ok { "exact" } else { "WRONG" }),
    ))
}

// ---- 2 ----------------------------------------------------------------

fn auc_oracle() -> Check {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut sets = 0;
    while sets < 100 {
        let n = r.gen_range(2..=500);
        let levels = r.gen_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
        let p = r.gen_range(0.05..0.95);
        let labels: Vec<bool> = (0..n).map(|_| r.gen_bool(p)).collect();
        let pos: Vec<f64> = scores.iter().zip(&labels).filter(|x| *x.1).map(|x| *x.0).collect();
        let neg: Vec<f64> = scores.iter().zip(&labels).filter(|x| !*x.1).map(|x| *x.0).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for a in &pos {
            for b in &neg {
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let oracle = wins / (pos.len() * neg.len()) as f64;
        let (_, auc) = roc_auc(&scores, &labels)?;
        worst = worst.max((auc - oracle).abs());
        sets += 1;
    }
    Ok(within(start.elapsed(), Duration::from_secs(10), worst <= 1e-9, format!("100 sets, max |diff| {worst:.2e}")))
}

// ---- 3 ----------------------------------------------------------------

fn random_windows(n: usize, h: usize, m: usize, seed: u64) -> WindowedTensor {
    let mut r = rng(seed);
    let values = (0..n * h * m).map(|_| r.gen_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|i| i % 2 == 0).collect();
    WindowedTensor::from_values(h, m, values, labels).unwrap()
}

fn gradients() -> Check {
    let start = Instant::now();
    let (h, m) = (6, 3);
    let head = |mut body: Vec<LayerSpec>| {
        body.push(LayerSpec::GlobalAveragePooling);
        body.push(LayerSpec::Dense { units: 2 });
        NetworkSpec { name: "probe".into(), h, m, layers: body }
    };
    let conv = |filters, kernel| LayerSpec::Conv1d { filters, kernel };
    let probes = [
        ("dense", vec![]),
        ("conv1d", vec![conv(4, 3)]),
        ("batch_norm", vec![conv(4, 4), LayerSpec::BatchNorm]),
        ("relu", vec![conv(4, 3), LayerSpec::Relu]),
        (
            "residual(projection)",
            vec![LayerSpec::Residual {
                branch: vec![conv(5, 3), LayerSpec::BatchNorm],
                shortcut: Shortcut::Projection { filters: 5 },
            }],
        ),
        (
            "residual(identity)",
            vec![
                conv(4, 2),
                LayerSpec::Residual { branch: vec![conv(4, 3), LayerSpec::BatchNorm], shortcut: Shortcut::Identity },
            ],
        ),
    ];
    let data = random_windows(4, h, m, 3);
    let mut layer_worst = 0.0f64;
    let mut lines = Vec::new();
    for (name, body) in probes {
        let c = gradient_check(&head(body), &data, 3, 40)?;
        lines.push(format!("{name} {:.1e}", c.max_relative_error));
        layer_worst = layer_worst.max(c.max_relative_error);
    }
    // Reference widths on a short, narrow input; a few entries per tensor.
    let data = random_windows(3, 8, 2, 4);
    let mut net_worst = 0.0f64;
    let mut skipped = 0;
    for spec in [build_fcnn(8, 2), build_resnet(8, 2)] {
        let c = gradient_check(&spec, &data, 5, 4)?;
        lines.push(format!("{} {:.1e}", spec.name, c.max_relative_error));
        net_worst = net_worst.max(c.max_relative_error);
        skipped += c.skipped_at_kinks;
    }
    Ok(within(
        start.elapsed(),
        Duration::from_secs(120),
        layer_worst <= 1e-4 && net_worst <= 1e-3,
        format!("{}; {skipped} entries skipped at ReLU kinks", lines.join(", ")),
    ))
}

// ---- 4, 5 -------------------------------------------------------------

fn separable(n: usize, m: usize, seed: u64) -> FeatureMatrix {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let labels = rows.iter().map(|x| x[0] + x[1] + x[2] > 0.0).collect();
    FeatureMatrix::from_rows(&rows, labels).unwrap()
}

/// Windows whose label says whether feature 0 strictly increases over time;
/// half of the samples are sorted.
fn trend(n: usize, h: usize, m: usize, seed: u64) -> WindowedTensor {
    let mut r = rng(seed);
    let mut values = Vec::with_capacity(n * h * m);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut f0: Vec<f32> = (0..h).map(|_| r.gen_range(-1.0..1.0)).collect();
        if i % 2 == 0 {
            f0.sort_by(f32::total_cmp);
        }
        for &v in &f0 {
            values.push(v);
            values.extend((1..m).map(|_| r.gen_range(-1.0f32..1.0)));
        }
        labels.push(f0.windows(2).all(|w| w[1] > w[0]));
    }
    WindowedTensor::from_values(h, m, values, labels).unwrap()
}

fn tree_estimators() -> Vec<(&'static str, Box<dyn Estimator<FeatureMatrix>>)> {
    vec![
        ("RandomForest", Box::new(ForestParams::default())),
        ("GradientBoosting", Box::new(BoostingParams::gradient_boosting())),
        ("xgb-like", Box::new(BoostingParams::xgb_like())),
    ]
}

fn network_estimator(arch: Architecture, epochs: usize) -> NetworkEstimator {
    NetworkEstimator { preset: NetworkPreset::desk(arch), config: TrainConfig { epochs, ..Default::default() } }
}

fn cv_auc<D: Samples>(est: &dyn Estimator<D>, data: &D, k: usize, seed: u64) -> Result<f64, faultprone::Error> {
    let folds = stratified_folds(data.labels(), k, seed)?;
    let results = cross_validate(est, data, &folds, seed)?;
    Ok(results.iter().map(|f| f.metrics.auc).sum::<f64>() / results.len() as f64 / 100.0)
}

fn learnability() -> Check {
    let start = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    let data = separable(1000, 20, 4);
    for (name, est) in tree_estimators() {
        let auc = cv_auc(est.as_ref(), &data, 10, 4)?;
        ok &= auc >= 0.95;
        lines.push(format!("{name} cv {auc:.3}"));
    }
    let data = trend(2000, 10, 3, 4);
    let split = train_test_split(&data.labels, 0.8, 4)?;
    let (train, test) = (data.subset(&split.train), data.subset(&split.test));
    const EPOCHS: usize = 30;
    for arch in [Architecture::Fcnn, Architecture::Resnet] {
        let est = network_estimator(arch, EPOCHS);
        let model = est.fit(&train, 4)?;
        let (_, auc) = roc_auc(&model.score(&test)?, &test.labels)?;
        ok &= auc >= 0.90;
        lines.push(format!("{} held-out {auc:.3} after {EPOCHS} epochs", est.id()));
    }
    Ok(within(start.elapsed(), Duration::from_secs(900), ok, lines.join(", ")))
}

fn shuffled<D: Samples + Clone>(data: &D, seed: u64, set: impl Fn(&mut D, Vec<bool>)) -> D {
    let mut labels = data.labels().to_vec();
    labels.shuffle(&mut rng(seed));
    let mut out = data.clone();
    set(&mut out, labels);
    out
}

fn null_sanity() -> Check {
    const REPS: u64 = 5;
    let mut ok = true;
    let mut lines = Vec::new();
    let base = separable(500, 10, 5);
    for (name, est) in tree_estimators() {
        let mut sum = 0.0;
        for rep in 0..REPS {
            let data = shuffled(&base, 100 + rep, |d, l| d.labels = l);
            sum += cv_auc(est.as_ref(), &data, 10, rep)?;
        }
        let mean = sum / REPS as f64;
        ok &= (mean - 0.5).abs() <= 0.05;
        lines.push(format!("{name} {mean:.3}"));
    }
    let base = trend(300, 10, 3, 5);
    for arch in [Architecture::Fcnn, Architecture::Resnet] {
        let est = network_estimator(arch, 5);
        let mut sum = 0.0;
        for rep in 0..REPS {
            let data = shuffled(&base, 200 + rep, |d, l| d.labels = l);
            sum += cv_auc(&est, &data, 5, rep)?;
        }
        let mean = sum / REPS as f64;
        ok &= (mean - 0.5).abs() <= 0.07;
        lines.push(format!("{} {mean:.3}", est.id()));
    }
    Ok(verdict(ok, format!("mean CV AUC over {REPS} shuffles: {}", lines.join(", "))))
}

// ---- 6 ----------------------------------------------------------------

fn importance_oracle() -> Check {
    let mut r = rng(6);
    let n = 600;
    let labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.4)).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            let mut row = vec![if y { 1.0 } else { 0.0 }];
            row.extend((0..10).map(|_| r.gen_range(-1.0..1.0)));
            row
        })
        .collect();
    let data = FeatureMatrix::from_rows(&rows, labels)?;
    let split = train_test_split(&data.labels, 0.8, 6)?;
    let (train, test) = (data.subset(&split.train), data.subset(&split.test));
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, est) in tree_estimators() {
        let model = est.fit(&train, 6)?;
        let fi = permutation_importance(name, model.as_ref(), &test, 6, 5, PermutationUnit::Slice)?;
        let copy = fi.importance[0];
        let noise_max = fi.importance[1..].iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let strictly_first = fi.importance[1..].iter().all(|&v| v < copy);
        ok &= strictly_first && noise_max <= 2.0;
        lines.push(format!("{name}: copy {copy:.2} pp, max |noise| {noise_max:.2} pp"));
    }
    Ok(verdict(ok, lines.join("; ")))
}

// ---- 7 ----------------------------------------------------------------

fn szz_fixture() -> Check {
    let start = Instant::now();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/history5.jsonl");
    let history = parse_history(&path)?;
    let fixes = identify_fix_commits(&history, r"PROJ-\d+", &[])?;
    let bug = FixSet { fixes: fixes.fixes.iter().filter(|f| f.hash == "c5").cloned().collect() };
    let got: Vec<String> =
        locate_inducing(&history, &bug, SzzOptions::default())?.into_iter().map(|l| l.commit_hash).collect();
    let addition = FixSet { fixes: vec![FixCommit { hash: "c3".into(), report_time: None }] };
    let none = locate_inducing(&history, &addition, SzzOptions::default())?;
    Ok(within(
        start.elapsed(),
        Duration::from_secs(1),
        got == ["c2"] && none.is_empty(),
        format!("fix c5 -> {got:?}, pure-addition fix -> {} commits", none.len()),
    ))
}

// ---- 8 ----------------------------------------------------------------

fn windowing_law() -> Check {
    const H: usize = 10;
    let mut r = rng(8);
    let mut bad = Vec::new();
    for trial in 0..200 {
        let sizes: Vec<usize> = (0..r.gen_range(1..8)).map(|_| r.gen_range(0..40)).collect();
        let mut rows = Vec::new();
        for (p, &size) in sizes.iter().enumerate() {
            for pos in 0..size {
                let mut metrics = vec![0.0; METRIC_NAMES.len()];
                metrics[0] = rows.len() as f64;
                metrics[1] = p as f64;
                rows.push(DatasetRow {
                    commit_hash: format!("p{p}-{pos}"),
                    project: format!("P{p}"),
                    position: pos,
                    timestamp: None,
                    rule_counts: vec![],
                    metrics,
                    inducing: r.gen_bool(0.5),
                });
            }
        }
        if rows.is_empty() {
            continue;
        }
        let ds = JointDataset {
            format: DATASET_FORMAT.into(),
            catalog: RuleCatalog::from_infos(vec![])?,
            metric_names: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
            rows,
            stats: Default::default(),
        };
        let t = windowed_tensor(&ds, H, 1, FeatureSet::Metrics)?;
        let expected: usize = sizes.iter().map(|&n| n.saturating_sub(H)).sum();
        if t.n != expected {
            bad.push(format!("trial {trial}: {} samples, expected {expected}", t.n));
            continue;
        }
        for s in 0..t.n {
            let at = |step: usize, f: usize| t.values[(s * H + step) * t.m + f] as usize;
            let first = at(0, 0);
            let consecutive = (0..H).all(|k| at(k, 0) == first + k);
            let one_project = (0..H).all(|k| at(k, 1) == at(0, 1));
            let target = &ds.rows[first + H];
            let successor = target.commit_hash == t.sample_ids[s]
                && target.project == ds.rows[first].project
                && t.labels[s] == target.inducing;
            if !(consecutive && one_project && successor) {
                bad.push(format!("trial {trial}, sample {s}"));
            }
        }
    }
    Ok(verdict(bad.is_empty(), if bad.is_empty() { "200 random project layouts".into() } else { bad.join("; ") }))
}

// ---- 9 ----------------------------------------------------------------

fn small_run(dir: &Path, out: &str) -> RunConfig {
    let paths = write_dataset(&dir.join("data"), &SyntheticSpec::default()).unwrap();
    RunConfig {
        issues: Some(paths.issues),
        measures: Some(paths.measures),
        labels: Some(paths.labels),
        rule_metadata: Some(paths.rule_metadata),
        folds: 3,
        window: 4,
        forest_trees: 20,
        boosting_stages: 20,
        epochs: 3,
        network_width: NetworkWidth::Desk,
        importance_repeats: 2,
        min_importance_auc: 0.0,
        out: dir.join(out),
        ..Default::default()
    }
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Check {
    let dir = tempfile::tempdir()?;
    for out in ["a", "b"] {
        Pipeline::new(small_run(dir.path(), out))?.run()?;
    }
    let (a, b) = (files_under(&dir.path().join("a")), files_under(&dir.path().join("b")));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let ok = a.contains_key("manifest.json") && a.keys().eq(b.keys()) && differing.is_empty();
    Ok(verdict(ok, format!("{} artifacts compared, {} differ {:?}", a.len(), differing.len(), differing)))
}

// ---- 10 ---------------------------------------------------------------

fn full_dataset() -> Check {
    let Some(dir) = std::env::var_os("FAULTPRONE_TDD_DIR").map(PathBuf::from) else {
        return Ok(Outcome::NotRun("dataset not supplied (set FAULTPRONE_TDD_DIR)".into()));
    };
    let out = tempfile::tempdir()?;
    let cfg_path = dir.join("run.toml");
    let mut cfg = if cfg_path.exists() {
        RunConfig::load(&cfg_path)?
    } else {
        RunConfig {
            issues: Some(dir.join("SONAR_ISSUES.csv")),
            measures: Some(dir.join("SONAR_MEASURES.csv")),
            labels: Some(dir.join("SZZ_FAULT_INDUCING_COMMITS.csv")),
            network_width: NetworkWidth::Desk,
            epochs: 20,
            protocol: Protocol::Holdout,
            ..Default::default()
        }
    };
    cfg.out = out.path().to_path_buf();
    cfg.features = FeatureSet::Rules;
    cfg.models = ModelKind::ALL.to_vec();
    Pipeline::new(cfg)?.run()?;
    let mut auc = BTreeMap::new();
    for m in ModelKind::ALL {
        let text = std::fs::read_to_string(out.path().join(format!("reports/{}.json", m.key())))?;
        let report: eval::EvalReport = serde_json::from_str(&text)?;
        auc.insert(m, report.mean.auc);
    }
    let tables = ["comparison.csv", "importance.csv"].iter().all(|f| out.path().join(f).exists())
        || out.path().join("importance_skipped.txt").exists();
    let best_tree = [ModelKind::RandomForest, ModelKind::GradientBoosting, ModelKind::XgbLike]
        .iter()
        .map(|m| auc[m])
        .fold(f64::NEG_INFINITY, f64::max);
    let networks_above = auc[&ModelKind::Fcnn] > best_tree && auc[&ModelKind::Resnet] > best_tree;
    let listing: Vec<String> = auc.iter().map(|(m, a)| format!("{} {a:.2}", m.label())).collect();
    Ok(verdict(
        tables && networks_above,
        format!("AUC {}; networks above trees: {networks_above}", listing.join(", ")),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("metric-formula fidelity", metric_formulas),
        ("AUC oracle", auc_oracle),
        ("gradient correctness", gradients),
        ("learnability floors", learnability),
        ("null sanity", null_sanity),
        ("permutation-importance oracle", importance_oracle),
        ("SZZ fixture", szz_fixture),
        ("windowing law", windowing_law),
        ("determinism", determinism),
        ("full-dataset run", full_dataset),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("criterion {:>2}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || id.ends_with(f.as_str())) {
            continue;
        }
        let line = match check() {
            Ok(Outcome::Pass(d)) => format!("PASS  {id} {name}: {d}"),
            Ok(Outcome::NotRun(d)) => format!("----  {id} {name}: not run: {d}"),
            Ok(Outcome::Fail(d)) => {
                failed += 1;
                format!("FAIL  {id} {name}: {d}")
            }
            Err(e) => {
                failed += 1;
                format!("FAIL  {id} {name}: error: {e}")
            }
        };
        println!("{line}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
