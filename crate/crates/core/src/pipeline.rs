//! End-to-end runs: configuration, stages and the artifacts they leave in the
//! output directory.
//!
//! ```text
//! out/
//!   config.json              resolved configuration
//!   labels.csv               szz output (when a history is configured)
//!   dataset.json             joined per-commit dataset
//!   features/{snapshot,windowed}.bin
//!   models/<model>.json      final models, trained on the training split
//!   reports/<model>.json     evaluation reports
//!   roc/<model>.{json,csv}   hold-out ROC of the final model
//!   importance/<model>.json  permutation importances on the hold-out split
//!   comparison.{csv,md}, roc.svg, importance*.csv, manifest.json
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, FoldResult, Roc};
use crate::featurize::{
    self, read_features, stratified_folds, train_test_split, write_features, FeatureFile, FeatureHeader,
    FeatureMatrix, FeatureSet, Samples, WindowedTensor,
};
use crate::importance::{self, FeatureImportance, PermutationUnit};
use crate::ingest::{self, JointDataset, RuleCatalog};
use crate::model::{Estimator, Scorer};
use crate::neural::{Architecture, NetworkEstimator, NetworkFile, NetworkPreset, TrainConfig};
use crate::seed;
use crate::szz;
use crate::trees::{BoostingParams, ForestParams, TreeModel, TreeModelFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RandomForest,
    GradientBoosting,
    XgbLike,
    Fcnn,
    Resnet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::RandomForest, ModelKind::GradientBoosting, ModelKind::XgbLike, ModelKind::Fcnn, ModelKind::Resnet];

    pub fn key(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "random_forest",
            ModelKind::GradientBoosting => "gradient_boosting",
            ModelKind::XgbLike => "xgb_like",
            ModelKind::Fcnn => "fcnn",
            ModelKind::Resnet => "resnet",
        }
    }

    /// Name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "RandomForest",
            ModelKind::GradientBoosting => "GradientBoosting",
            ModelKind::XgbLike => "xgb-like",
            ModelKind::Fcnn => "FCNN",
            ModelKind::Resnet => "ResNet",
        }
    }

    pub fn is_network(self) -> bool {
        matches!(self, ModelKind::Fcnn | ModelKind::Resnet)
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|&m| m == self).unwrap() as u64
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|m| m.key() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Stratified k-fold cross-validation over the whole data.
    Cv,
    /// The final model scored on the held-out split.
    Holdout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkWidth {
    Reference,
    /// An eighth of the reference filter counts.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub issues: Option<PathBuf>,
    pub measures: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub rule_metadata: Option<PathBuf>,
    /// JSON-lines commit history; used to derive labels when `labels` is unset.
    pub history: Option<PathBuf>,
    pub fix_pattern: String,
    pub fix_commits: Vec<String>,
    pub filter_by_report_time: bool,
    pub ignore_cosmetic: bool,
    pub include_uncategorized: bool,

    pub features: FeatureSet,
    pub models: Vec<ModelKind>,
    pub window: usize,
    pub folds: usize,
    pub split: f64,
    pub protocol: Protocol,
    pub seed: u64,

    pub forest_trees: usize,
    pub boosting_stages: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub network_width: NetworkWidth,
    pub balanced_class_weights: bool,

    pub min_importance_auc: f64,
    pub importance_repeats: usize,
    pub importance_cutoff: f64,
    pub permutation_unit: PermutationUnit,

    /// Not written into artifacts, so runs into different directories
    /// produce identical outputs.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            issues: None,
            measures: None,
            labels: None,
            rule_metadata: None,
            history: None,
            fix_pattern: r"(?i)\b(fix(e[sd])?|bug)\b|\b[A-Z][A-Z0-9]+-\d+\b".into(),
            fix_commits: Vec::new(),
            filter_by_report_time: true,
            ignore_cosmetic: false,
            include_uncategorized: false,
            features: FeatureSet::Rules,
            models: ModelKind::ALL.to_vec(),
            window: 10,
            folds: 10,
            split: 0.8,
            protocol: Protocol::Cv,
            seed: 1,
            forest_trees: 100,
            boosting_stages: 100,
            epochs: 500,
            batch_size: 64,
            network_width: NetworkWidth::Reference,
            balanced_class_weights: false,
            min_importance_auc: 55.0,
            importance_repeats: 5,
            importance_cutoff: 1.0,
            permutation_unit: PermutationUnit::Slice,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config; relative input paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Schema { file: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.issues, &mut cfg.measures, &mut cfg.labels, &mut cfg.rule_metadata, &mut cfg.history]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return bad("a model is listed twice".into());
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.folds < 2 {
            return bad(format!("{} folds; need at least 2", self.folds));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad(format!("split {} not in (0, 1)", self.split));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.forest_trees == 0 {
            return bad("epochs, batch size and forest size must be at least 1".into());
        }
        if self.importance_repeats == 0 || !(self.importance_cutoff >= 0.0) {
            return bad("importance needs at least one repeat and a non-negative cutoff".into());
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the serialized config.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }

    fn forest(&self) -> ForestParams {
        ForestParams { estimators: self.forest_trees, ..Default::default() }
    }

    fn boosting(&self, kind: ModelKind) -> BoostingParams {
        let base =
            if kind == ModelKind::XgbLike { BoostingParams::xgb_like() } else { BoostingParams::gradient_boosting() };
        BoostingParams { estimators: self.boosting_stages, ..base }
    }

    fn network(&self, kind: ModelKind) -> NetworkEstimator {
        let arch = if kind == ModelKind::Fcnn { Architecture::Fcnn } else { Architecture::Resnet };
        let preset = match (self.network_width, arch) {
            (NetworkWidth::Reference, Architecture::Fcnn) => NetworkPreset::fcnn(),
            (NetworkWidth::Reference, Architecture::Resnet) => NetworkPreset::resnet(),
            (NetworkWidth::Desk, a) => NetworkPreset::desk(a),
        };
        NetworkEstimator {
            preset,
            config: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                balanced_class_weights: self.balanced_class_weights,
                ..Default::default()
            },
        }
    }

    fn protocol_label(&self) -> String {
        match self.protocol {
            Protocol::Cv => format!("{}-fold stratified cross-validation", self.folds),
            Protocol::Holdout => {
                let train = (self.split * 100.0).round();
                format!("{train}/{} stratified hold-out", 100.0 - train)
            }
        }
    }
}

/// Which input a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Snapshot,
    Windowed,
}

impl Kind {
    fn of(m: ModelKind) -> Kind {
        if m.is_network() {
            Kind::Windowed
        } else {
            Kind::Snapshot
        }
    }

    fn file(self) -> &'static str {
        match self {
            Kind::Snapshot => "features/snapshot.bin",
            Kind::Windowed => "features/windowed.bin",
        }
    }

    fn index(self) -> u64 {
        match self {
            Kind::Snapshot => 0,
            Kind::Windowed => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocFile {
    pub model: String,
    pub evaluation_set: String,
    pub auc: f64,
    pub roc: Roc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub format: String,
    pub config: RunConfig,
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every artifact, keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
}

pub const FAILURE_MARKER: &str = "FAILED";
const HOLDOUT_SET: &str = "held-out split";

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!(
            "{} (run the stage that produces it first)",
            path.display()
        )),
        _ => Error::io(path, e),
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::invalid(format!("no {what} input configured")))
}

/// One configured run rooted at `config.out`.
pub struct Pipeline {
    pub config: RunConfig,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
        let p = Pipeline { config };
        write_json(&p.path("config.json"), &p.config)?;
        Ok(p)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.config.out.join(rel)
    }

    fn seed_for(&self, tag: u64, index: u64) -> u64 {
        seed::derive(self.config.seed, tag, index)
    }

    /// Runs `f` as stage `name`; a failure leaves a marker file naming it.
    pub fn stage<T>(&self, name: &str, f: impl FnOnce(&Self) -> Result<T>) -> Result<T> {
        info!("stage {name}");
        f(self).inspect_err(|e| {
            let marker = self.path(FAILURE_MARKER);
            if let Err(w) = std::fs::write(&marker, format!("stage {name} failed: {e}\n")) {
                warn!("could not write {}: {w}", marker.display());
            }
        })
    }

    pub fn run(&self) -> Result<()> {
        let _ = std::fs::remove_file(self.path(FAILURE_MARKER));
        if self.config.labels.is_none() && self.config.history.is_some() {
            self.stage("szz", Self::szz)?;
        }
        self.stage("ingest", Self::ingest)?;
        self.stage("featurize", Self::featurize)?;
        self.stage("train", Self::train)?;
        self.stage("evaluate", Self::evaluate)?;
        self.stage("importance", Self::importance)?;
        self.stage("report", Self::report)
    }

    /// Labels fault-inducing commits from the configured history.
    pub fn szz(&self) -> Result<()> {
        let cfg = &self.config;
        let history = szz::parse_history(required(&cfg.history, "history")?)?;
        let fixes = szz::identify_fix_commits(&history, &cfg.fix_pattern, &cfg.fix_commits)?;
        let options =
            szz::SzzOptions { filter_by_report_time: cfg.filter_by_report_time, ignore_cosmetic: cfg.ignore_cosmetic };
        let pairs = szz::locate_inducing_pairs(&history, &fixes, options)?;
        info!("{} fix commits, {} inducing/fix pairs", fixes.len(), pairs.len());
        szz::write_labels(&self.path("labels.csv"), &history, &pairs)
    }

    fn labels_path(&self) -> Result<PathBuf> {
        match (&self.config.labels, &self.config.history) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(_)) => Ok(self.path("labels.csv")),
            (None, None) => Err(Error::invalid("configure either labels or a history to derive them from")),
        }
    }

    pub fn ingest(&self) -> Result<JointDataset> {
        let cfg = &self.config;
        let issues = ingest::load_issues(required(&cfg.issues, "issues")?)?;
        let measures = ingest::load_measures(required(&cfg.measures, "measures")?)?;
        let labels_path = self.labels_path()?;
        if !labels_path.exists() {
            return Err(Error::NotFound(format!("labels file {}", labels_path.display())));
        }
        let labels = ingest::load_labels(&labels_path)?;
        let mut meta = issues.rule_meta.clone();
        if let Some(p) = &cfg.rule_metadata {
            meta.extend(ingest::load_rule_metadata(p)?);
        }
        let catalog = RuleCatalog::from_rules(issues.rule_ids(), &meta, cfg.include_uncategorized);
        let ds = ingest::join_dataset(&issues, &measures, &labels, &catalog)?;
        info!("dataset: {} commits, {} inducing, {} rules", ds.len(), ds.positives(), ds.catalog.len());
        ds.save(&self.path("dataset.json"))?;
        Ok(ds)
    }

    fn dataset(&self) -> Result<JointDataset> {
        let p = self.path("dataset.json");
        if !p.exists() {
            return Err(Error::NotFound(format!("{} (run `ingest` first)", p.display())));
        }
        JointDataset::load(&p)
    }

    fn kinds(&self) -> Vec<Kind> {
        let mut k: Vec<Kind> = self.config.models.iter().map(|&m| Kind::of(m)).collect();
        k.sort_by_key(|k| k.index());
        k.dedup();
        k
    }

    pub fn featurize(&self) -> Result<()> {
        let ds = self.dataset()?;
        let fs = self.config.features;
        let digest = ds.catalog.digest();
        for kind in self.kinds() {
            let mut options = BTreeMap::new();
            let data: FeatureFile = match kind {
                Kind::Snapshot => featurize::snapshot_matrix(&ds, fs)?.into(),
                Kind::Windowed => {
                    options.insert("window".to_string(), self.config.window.to_string());
                    featurize::windowed_tensor(&ds, self.config.window, 1, fs)?.into()
                }
            };
            let path = self.path(kind.file());
            write(&path, [])?;
            write_features(&path, &data, fs, &digest, options)?;
        }
        Ok(())
    }

    fn load_features(&self, kind: Kind) -> Result<(FeatureHeader, FeatureFile)> {
        let path = self.path(kind.file());
        if !path.exists() {
            return Err(Error::NotFound(format!("{} (run `featurize` first)", path.display())));
        }
        let (header, data) = read_features(&path)?;
        let ds_digest = self.dataset()?.catalog.digest();
        if header.catalog_digest != ds_digest {
            return Err(Error::StaleArtifact(format!(
                "{} was built for rule catalog {}, the dataset has {}; rerun `featurize`",
                path.display(),
                header.catalog_digest,
                ds_digest
            )));
        }
        if header.feature_set != self.config.features {
            return Err(Error::StaleArtifact(format!(
                "{} holds {} features, the config asks for {}; rerun `featurize`",
                path.display(),
                header.feature_set.as_str(),
                self.config.features.as_str()
            )));
        }
        if kind == Kind::Windowed && header.h != Some(self.config.window) {
            return Err(Error::StaleArtifact(format!(
                "{} uses window {:?}, the config asks for {}; rerun `featurize`",
                path.display(),
                header.h,
                self.config.window
            )));
        }
        Ok((header, data))
    }

    fn snapshot(&self) -> Result<(FeatureHeader, FeatureMatrix)> {
        match self.load_features(Kind::Snapshot)? {
            (h, FeatureFile::Snapshot(x)) => Ok((h, x)),
            _ => Err(Error::invalid("snapshot feature file holds windows")),
        }
    }

    fn windowed(&self) -> Result<(FeatureHeader, WindowedTensor)> {
        match self.load_features(Kind::Windowed)? {
            (h, FeatureFile::Windowed(x)) => Ok((h, x)),
            _ => Err(Error::invalid("windowed feature file holds a snapshot")),
        }
    }

    fn split_of<D: Samples>(&self, data: &D, kind: Kind) -> Result<(D, D)> {
        let split =
            train_test_split(data.labels(), self.config.split, self.seed_for(seed::stream::SPLIT, kind.index()))?;
        Ok((data.subset(&split.train), data.subset(&split.test)))
    }

    fn model_path(&self, m: ModelKind) -> PathBuf {
        self.path(&format!("models/{}.json", m.key()))
    }

    /// Fits every configured model on the training split.
    pub fn train(&self) -> Result<()> {
        for &m in &self.config.models {
            let seed = self.seed_for(seed::stream::MODEL, m.index());
            info!("training {}", m.label());
            if m.is_network() {
                let (header, data) = self.windowed()?;
                let (train, _) = self.split_of(&data, Kind::Windowed)?;
                let est = self.config.network(m);
                let spec = est.preset.build(train.h, train.m);
                let net = crate::neural::train(&spec, &train, &est.config, seed)?;
                NetworkFile::new(net, &header.catalog_digest, &header.feature_names).save(&self.model_path(m))?;
            } else {
                let (header, data) = self.snapshot()?;
                let (train, _) = self.split_of(&data, Kind::Snapshot)?;
                let model = match m {
                    ModelKind::RandomForest => {
                        TreeModel::Forest(crate::trees::fit_random_forest(&train, &self.config.forest(), seed)?)
                    }
                    _ => TreeModel::Boosted(crate::trees::fit_gradient_boosting(&train, &self.config.boosting(m), seed)?),
                };
                write(&self.model_path(m), [])?;
                TreeModelFile::new(model, &header.catalog_digest, &header.feature_names).save(&self.model_path(m))?;
            }
        }
        Ok(())
    }

    fn stale_model(&self, m: ModelKind, model_digest: &str, header: &FeatureHeader) -> Result<()> {
        if model_digest != header.catalog_digest {
            return Err(Error::StaleArtifact(format!(
                "{} was trained on rule catalog {}, the features use {}; rerun `train`",
                self.model_path(m).display(),
                model_digest,
                header.catalog_digest
            )));
        }
        Ok(())
    }

    fn tree_model(&self, m: ModelKind, header: &FeatureHeader) -> Result<TreeModel> {
        let p = self.model_path(m);
        if !p.exists() {
            return Err(Error::NotFound(format!("{} (run `train` first)", p.display())));
        }
        let f = TreeModelFile::load(&p)?;
        self.stale_model(m, &f.catalog_digest, header)?;
        Ok(f.model)
    }

    fn network_model(&self, m: ModelKind, header: &FeatureHeader) -> Result<crate::neural::TrainedNetwork> {
        let p = self.model_path(m);
        if !p.exists() {
            return Err(Error::NotFound(format!("{} (run `train` first)", p.display())));
        }
        let f = NetworkFile::load(&p)?;
        self.stale_model(m, &f.catalog_digest, header)?;
        Ok(f.network)
    }

    fn evaluate_one<D: Samples>(
        &self,
        m: ModelKind,
        kind: Kind,
        data: &D,
        final_model: &dyn Scorer<D>,
        estimator: &dyn Estimator<D>,
    ) -> Result<EvalReport> {
        let (_, test) = self.split_of(data, kind)?;
        let scores = final_model.score(&test)?;
        let (roc, auc) = eval::roc_auc(&scores, test.labels())?;
        let roc_file = RocFile { model: m.label().into(), evaluation_set: HOLDOUT_SET.into(), auc, roc };
        write_json(&self.path(&format!("roc/{}.json", m.key())), &roc_file)?;
        write(&self.path(&format!("roc/{}.csv", m.key())), eval::roc_csv(&roc_file.roc))?;
        let folds: Vec<FoldResult> = match self.config.protocol {
            Protocol::Holdout => vec![eval::evaluate_scores(&scores, test.labels(), 0)?],
            Protocol::Cv => {
                let folds = stratified_folds(
                    data.labels(),
                    self.config.folds,
                    self.seed_for(seed::stream::FOLDS, kind.index()),
                )?;
                eval::cross_validate(estimator, data, &folds, self.seed_for(seed::stream::MODEL, m.index()))?
            }
        };
        Ok(EvalReport::from_folds(
            m.label().into(),
            self.config.features.as_str().into(),
            self.config.protocol_label(),
            self.config.seed,
            self.config.digest(),
            folds,
        ))
    }

    /// Scores every model under the configured protocol and records the
    /// hold-out ROC of each final model.
    pub fn evaluate(&self) -> Result<()> {
        for &m in &self.config.models {
            info!("evaluating {}", m.label());
            let report = if m.is_network() {
                let (header, data) = self.windowed()?;
                let net = self.network_model(m, &header)?;
                self.evaluate_one(m, Kind::Windowed, &data, &net, &self.config.network(m))?
            } else {
                let (header, data) = self.snapshot()?;
                let model = self.tree_model(m, &header)?;
                match m {
                    ModelKind::RandomForest => {
                        self.evaluate_one(m, Kind::Snapshot, &data, &model, &self.config.forest())?
                    }
                    _ => self.evaluate_one(m, Kind::Snapshot, &data, &model, &self.config.boosting(m))?,
                }
            };
            write_json(&self.path(&format!("reports/{}.json", m.key())), &report)?;
        }
        Ok(())
    }

    fn reports(&self) -> Result<Vec<EvalReport>> {
        self.config.models.iter().map(|m| read_json(&self.path(&format!("reports/{}.json", m.key())))).collect()
    }

    /// Permutation importance of every model on the hold-out split, unless
    /// no model reaches the configured AUC floor.
    pub fn importance(&self) -> Result<()> {
        let reports = self.reports()?;
        let best = reports.iter().map(|r| r.mean.auc).fold(f64::NEG_INFINITY, f64::max);
        let skipped = self.path("importance_skipped.txt");
        let _ = std::fs::remove_file(&skipped);
        if best < self.config.min_importance_auc {
            let msg = format!(
                "importance not computed: best aggregate AUC {best:.2} is below the {:.2} floor\n",
                self.config.min_importance_auc
            );
            warn!("{}", msg.trim_end());
            return write(&skipped, msg);
        }
        let reps = self.config.importance_repeats;
        let unit = self.config.permutation_unit;
        for &m in &self.config.models {
            info!("permutation importance for {}", m.label());
            let s = self.seed_for(seed::stream::PERMUTATION, m.index());
            let fi = if m.is_network() {
                let (header, data) = self.windowed()?;
                let net = self.network_model(m, &header)?;
                let (_, test) = self.split_of(&data, Kind::Windowed)?;
                importance::permutation_importance(m.label(), &net, &test, s, reps, unit)?
            } else {
                let (header, data) = self.snapshot()?;
                let model = self.tree_model(m, &header)?;
                let (_, test) = self.split_of(&data, Kind::Snapshot)?;
                importance::permutation_importance(m.label(), &model, &test, s, reps, unit)?
            };
            write_json(&self.path(&format!("importance/{}.json", m.key())), &fi)?;
        }
        Ok(())
    }

    /// Rebuilds every table and figure from stored artifacts, then writes
    /// the manifest.
    pub fn report(&self) -> Result<()> {
        let reports = self.reports()?;
        write(&self.path("comparison.csv"), eval::comparison_csv(&reports))?;
        write(&self.path("comparison.md"), eval::comparison_markdown(&reports))?;
        let curves: Vec<(String, Roc, f64)> = self
            .config
            .models
            .iter()
            .map(|m| read_json::<RocFile>(&self.path(&format!("roc/{}.json", m.key()))))
            .map(|r| r.map(|r| (r.model, r.roc, r.auc)))
            .collect::<Result<_>>()?;
        write(&self.path("roc.svg"), eval::roc_svg(&curves))?;

        let imp_paths: Vec<PathBuf> =
            self.config.models.iter().map(|m| self.path(&format!("importance/{}.json", m.key()))).collect();
        if imp_paths.iter().all(|p| p.exists()) && !self.path("importance_skipped.txt").exists() {
            let results: Vec<FeatureImportance> = imp_paths.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
            let aggregate: BTreeMap<String, f64> = reports.iter().map(|r| (r.model.clone(), r.mean.auc)).collect();
            let ds = self.dataset()?;
            let meta = ds.catalog.rules().iter().map(|r| (r.rule_id.clone(), r.meta.clone())).collect();
            let ranking = importance::rank_features(&results, &aggregate, &meta, HOLDOUT_SET)?;
            let filtered = importance::rank_and_filter(&ranking, self.config.importance_cutoff)?;
            write(&self.path("importance.csv"), importance::ranking_csv(&ranking))?;
            write(&self.path("importance_top.csv"), importance::filtered_csv(&ranking, &filtered))?;
            write_json(&self.path("importance_summary.json"), &filtered)?;
        }
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        let mut stack = vec![self.config.out.clone()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let rel = path.strip_prefix(&self.config.out).unwrap().to_string_lossy().replace('\\', "/");
                if rel == "manifest.json" || rel == FAILURE_MARKER {
                    continue;
                }
                artifacts.insert(rel, sha256_file(&path)?);
            }
        }
        let cfg = &self.config;
        let mut inputs = BTreeMap::new();
        for p in [&cfg.issues, &cfg.measures, &cfg.labels, &cfg.rule_metadata, &cfg.history].into_iter().flatten() {
            if p.exists() {
                inputs.insert(p.display().to_string(), sha256_file(p)?);
            }
        }
        let mut seeds = BTreeMap::from([("master".to_string(), cfg.seed)]);
        for kind in [Kind::Snapshot, Kind::Windowed] {
            let name = if kind == Kind::Snapshot { "snapshot" } else { "windowed" };
            seeds.insert(format!("split.{name}"), self.seed_for(seed::stream::SPLIT, kind.index()));
            seeds.insert(format!("folds.{name}"), self.seed_for(seed::stream::FOLDS, kind.index()));
        }
        for &m in &cfg.models {
            seeds.insert(format!("model.{}", m.key()), self.seed_for(seed::stream::MODEL, m.index()));
            seeds.insert(format!("permutation.{}", m.key()), self.seed_for(seed::stream::PERMUTATION, m.index()));
        }
        let manifest = Manifest {
            format: "faultprone.manifest/1".into(),
            config: cfg.clone(),
            config_digest: cfg.digest(),
            seeds,
            inputs,
            artifacts,
        };
        write_json(&self.path("manifest.json"), &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names() {
        assert_eq!("xgb-like".parse::<ModelKind>().unwrap(), ModelKind::XgbLike);
        assert_eq!("ResNet".parse::<ModelKind>().unwrap(), ModelKind::Resnet);
        assert!("svm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(
            &p,
            "issues = \"data/issues.csv\"\nfeatures = \"metrics\"\nmodels = [\"random_forest\", \"fcnn\"]\nfolds = 5\nprotocol = \"holdout\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.issues.as_deref(), Some(dir.path().join("data/issues.csv").as_path()));
        assert_eq!(cfg.features, FeatureSet::Metrics);
        assert_eq!(cfg.models, vec![ModelKind::RandomForest, ModelKind::Fcnn]);
        assert_eq!(cfg.protocol_label(), "80/20 stratified hold-out");
        cfg.validate().unwrap();
        std::fs::write(&p, "colour = 3\n").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Schema { .. })));
        let bad = RunConfig { folds: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RunConfig { models: vec![ModelKind::Fcnn, ModelKind::Fcnn], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn digest_ignores_output_directory() {
        let a = RunConfig { out: "x".into(), ..Default::default() };
        let b = RunConfig { out: "y".into(), ..Default::default() };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), RunConfig { seed: 2, ..Default::default() }.digest());
    }
}
