//! Random forests and gradient-boosted trees over snapshot matrices.

mod tree;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{FeatureMatrix, Samples};
use crate::model::{Estimator, Scorer};
use crate::seed;

pub use tree::{DecisionTree, Node};
use tree::{Criterion, TreeBuilder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub estimators: usize,
    /// Features examined per split; `floor(sqrt(M))` when unset.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { estimators: 100, max_features: None, max_depth: None, min_samples_leaf: 1 }
    }
}

impl ForestParams {
    pub fn features_per_split(&self, m: usize) -> usize {
        self.max_features.unwrap_or_else(|| (m as f64).sqrt().floor() as usize).clamp(1, m.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingParams {
    pub estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Use gradient and hessian sums for split gain and leaf weights.
    pub second_order: bool,
    /// L2 penalty on leaf weights (second-order mode).
    pub lambda: f64,
    /// Minimum hessian sum per child (second-order mode).
    pub min_child_weight: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self::gradient_boosting()
    }
}

impl BoostingParams {
    pub fn gradient_boosting() -> Self {
        BoostingParams {
            estimators: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
            second_order: false,
            lambda: 0.0,
            min_child_weight: 0.0,
        }
    }

    /// Depth-6 second-order boosting with the usual xgboost defaults.
    pub fn xgb_like() -> Self {
        BoostingParams {
            estimators: 100,
            learning_rate: 0.3,
            max_depth: 6,
            min_samples_leaf: 1,
            second_order: true,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }

    pub fn label(&self) -> &'static str {
        if self.second_order {
            "xgb-like"
        } else {
            "GradientBoosting"
        }
    }
}

fn check_training_set(train: &FeatureMatrix) -> Result<()> {
    if train.n < 2 {
        return Err(Error::invalid("need at least 2 training samples"));
    }
    let pos = train.positives();
    if pos == 0 || pos == train.n {
        return Err(Error::invalid("training set has a single class"));
    }
    if train.m == 0 {
        return Err(Error::invalid("training set has no features"));
    }
    Ok(())
}

fn check_dims(expected: usize, data: &FeatureMatrix) -> Result<()> {
    if data.m != expected {
        return Err(Error::Dimension { expected, got: data.m });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub params: ForestParams,
    pub features_per_split: usize,
    pub seed: u64,
    /// Seed of each tree's bootstrap and feature draws.
    pub tree_seeds: Vec<u64>,
    pub trees: Vec<DecisionTree>,
}

/// Sample-with-replacement index multiset of size `n`.
pub fn bootstrap(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// A single fully grown Gini tree on the index multiset `idx`.
pub fn fit_tree(train: &FeatureMatrix, idx: &[usize], max_depth: Option<usize>, min_samples_leaf: usize) -> DecisionTree {
    let target: Vec<f64> = train.labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let ones = vec![1.0; train.n];
    TreeBuilder {
        x: train,
        target: &target,
        hess: &ones,
        criterion: Criterion::Gini,
        max_depth,
        min_samples_leaf,
        min_child_weight: 0.0,
        max_features: None,
    }
    .build(idx, &mut seed::rng(0))
}

pub fn fit_random_forest(train: &FeatureMatrix, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    check_training_set(train)?;
    if params.estimators == 0 {
        return Err(Error::invalid("a forest needs at least one tree"));
    }
    let k = params.features_per_split(train.m);
    let target: Vec<f64> = train.labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let ones = vec![1.0; train.n];
    let builder = TreeBuilder {
        x: train,
        target: &target,
        hess: &ones,
        criterion: Criterion::Gini,
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        min_child_weight: 0.0,
        max_features: Some(k),
    };
    let tree_seeds: Vec<u64> = (0..params.estimators)
        .map(|t| seed::derive(seed, seed::stream::FOREST_TREE, t as u64))
        .collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = seed::rng(s);
            let idx = bootstrap(train.n, &mut rng);
            builder.build(&idx, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        n_features: train.m,
        params: params.clone(),
        features_per_split: k,
        seed,
        tree_seeds,
        trees,
    })
}

impl ForestModel {
    pub fn predict_scores(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        check_dims(self.n_features, data)?;
        let t = self.trees.len() as f64;
        Ok((0..data.n)
            .into_par_iter()
            .map(|i| {
                let row = data.row(i);
                self.trees.iter().map(|tree| tree.predict_row(row)).sum::<f64>() / t
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub n_features: usize,
    pub params: BoostingParams,
    pub seed: u64,
    pub initial_log_odds: f64,
    pub trees: Vec<DecisionTree>,
    /// Mean training logistic loss after 0, 1, … accepted stages.
    pub train_loss: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_loss(f: &[f64], y: &[f64]) -> f64 {
    // log(1 + e^f) − y·f, computed without overflow
    let total: f64 = f
        .iter()
        .zip(y)
        .map(|(&f, &y)| f.max(0.0) + (-f.abs()).exp().ln_1p() - y * f)
        .sum();
    total / f.len() as f64
}

pub fn fit_gradient_boosting(train: &FeatureMatrix, params: &BoostingParams, seed: u64) -> Result<BoostedModel> {
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
        return Err(Error::invalid(format!("learning rate {} must be positive", params.learning_rate)));
    }
    if params.max_depth == 0 {
        return Err(Error::invalid("boosting depth must be at least 1"));
    }
    check_training_set(train)?;
    let y: Vec<f64> = train.labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let prior = train.positives() as f64 / train.n as f64;
    let f0 = (prior / (1.0 - prior)).ln();
    let mut f = vec![f0; train.n];
    let mut loss = log_loss(&f, &y);
    let mut train_loss = vec![loss];
    let mut trees = Vec::new();
    let idx: Vec<usize> = (0..train.n).collect();
    let mut rng = seed::derived_rng(seed, seed::stream::BOOSTING, 0);
    let criterion = if params.second_order {
        Criterion::SecondOrder { lambda: params.lambda }
    } else {
        Criterion::Variance
    };
    for stage in 0..params.estimators {
        let p: Vec<f64> = f.iter().map(|&z| sigmoid(z)).collect();
        let residual: Vec<f64> = y.iter().zip(&p).map(|(y, p)| y - p).collect();
        let hess: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let tree = TreeBuilder {
            x: train,
            target: &residual,
            hess: &hess,
            criterion,
            max_depth: Some(params.max_depth),
            min_samples_leaf: params.min_samples_leaf,
            min_child_weight: params.min_child_weight,
            max_features: None,
        }
        .build(&idx, &mut rng);
        let next: Vec<f64> = (0..train.n)
            .map(|i| f[i] + params.learning_rate * tree.predict_row(train.row(i)))
            .collect();
        let next_loss = log_loss(&next, &y);
        if !(next_loss < loss) {
            log::debug!("boosting stopped at stage {stage}: loss {next_loss} >= {loss}");
            break;
        }
        f = next;
        loss = next_loss;
        train_loss.push(loss);
        trees.push(tree);
    }
    Ok(BoostedModel {
        n_features: train.m,
        params: params.clone(),
        seed,
        initial_log_odds: f0,
        trees,
        train_loss,
    })
}

impl BoostedModel {
    /// Additive log-odds after all stages.
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.initial_log_odds
            + self.params.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict_scores(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        check_dims(self.n_features, data)?;
        Ok((0..data.n).into_par_iter().map(|i| sigmoid(self.decision(data.row(i)))).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TreeModel {
    Forest(ForestModel),
    Boosted(BoostedModel),
}

impl TreeModel {
    pub fn predict_scores(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            TreeModel::Forest(m) => m.predict_scores(data),
            TreeModel::Boosted(m) => m.predict_scores(data),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TreeModel::Forest(_) => "RandomForest",
            TreeModel::Boosted(m) => m.params.label(),
        }
    }
}

impl Scorer<FeatureMatrix> for TreeModel {
    fn score(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_scores(data)
    }
}

impl Estimator<FeatureMatrix> for ForestParams {
    fn id(&self) -> String {
        "RandomForest".into()
    }

    fn fit(&self, train: &FeatureMatrix, seed: u64) -> Result<Box<dyn Scorer<FeatureMatrix>>> {
        Ok(Box::new(TreeModel::Forest(fit_random_forest(train, self, seed)?)))
    }
}

impl Estimator<FeatureMatrix> for BoostingParams {
    fn id(&self) -> String {
        self.label().into()
    }

    fn fit(&self, train: &FeatureMatrix, seed: u64) -> Result<Box<dyn Scorer<FeatureMatrix>>> {
        Ok(Box::new(TreeModel::Boosted(fit_gradient_boosting(train, self, seed)?)))
    }
}

pub const MODEL_FORMAT: &str = "faultprone.trees/1";

/// A saved tree model with what is needed to check it against new inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModelFile {
    pub format: String,
    pub catalog_digest: String,
    pub feature_names: Vec<String>,
    pub model: TreeModel,
}

impl TreeModelFile {
    pub fn new(model: TreeModel, catalog_digest: &str, feature_names: &[String]) -> Self {
        TreeModelFile {
            format: MODEL_FORMAT.into(),
            catalog_digest: catalog_digest.into(),
            feature_names: feature_names.to_vec(),
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: TreeModelFile = serde_json::from_slice(&bytes)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Artifact {
                path: path.display().to_string(),
                message: format!("unsupported model format `{}`", file.format),
            });
        }
        Ok(file)
    }
}
