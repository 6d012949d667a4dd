//! Model inputs: per-commit snapshot matrices for the tree models and
//! rolling-window tensors for the networks, plus stratified folds and
//! train/test splits.

mod io;
mod split;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::JointDataset;

pub use io::{read_features, write_features, FeatureFile, FeatureHeader};
pub use split::{stratified_folds, train_test_split, FoldAssignment, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// One column per categorized rule: violations introduced by the commit.
    Rules,
    /// The 24 software metrics.
    Metrics,
}

impl FeatureSet {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Rules => "rules",
            FeatureSet::Metrics => "metrics",
        }
    }

    fn names(self, ds: &JointDataset) -> Vec<String> {
        match self {
            FeatureSet::Rules => ds.catalog.ids().map(String::from).collect(),
            FeatureSet::Metrics => ds.metric_names.clone(),
        }
    }

    fn push_row(self, row: &crate::ingest::DatasetRow, out: &mut Vec<f64>) {
        match self {
            FeatureSet::Rules => out.extend(row.rule_counts.iter().map(|&c| c as f64)),
            FeatureSet::Metrics => out.extend_from_slice(&row.metrics),
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rules" => Ok(FeatureSet::Rules),
            "metrics" => Ok(FeatureSet::Metrics),
            other => Err(Error::invalid(format!("unknown feature set `{other}` (rules|metrics)"))),
        }
    }
}

/// Anything the evaluation code can split by sample.
pub trait Samples: Sized + Sync {
    fn len(&self) -> usize;
    fn labels(&self) -> &[bool];
    fn n_features(&self) -> usize;
    fn feature_names(&self) -> &[String];
    fn subset(&self, idx: &[usize]) -> Self;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn positives(&self) -> usize {
        self.labels().iter().filter(|&&l| l).count()
    }
}

/// N×M snapshot input, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n: usize,
    pub m: usize,
    pub values: Vec<f64>,
    pub labels: Vec<bool>,
    pub feature_names: Vec<String>,
    pub sample_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        m: usize,
        values: Vec<f64>,
        labels: Vec<bool>,
        feature_names: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if values.len() != n * m || feature_names.len() != m || sample_ids.len() != n {
            return Err(Error::invalid(format!(
                "inconsistent matrix: {} values, {n} labels, {} names, {} ids for M={m}",
                values.len(),
                feature_names.len(),
                sample_ids.len()
            )));
        }
        Ok(FeatureMatrix { n, m, values, labels, feature_names, sample_ids })
    }

    /// Matrix with generated names and ids, for synthetic data.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<bool>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("ragged rows"));
        }
        let values = rows.iter().flatten().copied().collect();
        let names = (0..m).map(|j| format!("f{j}")).collect();
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        Self::new(m, values, labels, names, ids)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.m + j] = v;
    }
}

impl Samples for FeatureMatrix {
    fn len(&self) -> usize {
        self.n
    }

    fn labels(&self) -> &[bool] {
        &self.labels
    }

    fn n_features(&self) -> usize {
        self.m
    }

    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.m);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n: idx.len(),
            m: self.m,
            values,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }
}

/// Where a window came from: its project and the position of its last commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub project: String,
    pub end_position: usize,
}

/// N×h×M windowed input, sample-major then time then feature. Each sample's
/// label is the label of the commit right after its window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedTensor {
    pub n: usize,
    pub h: usize,
    pub m: usize,
    pub values: Vec<f32>,
    pub labels: Vec<bool>,
    pub feature_names: Vec<String>,
    pub origins: Vec<WindowOrigin>,
    /// Hash of the labeled (successor) commit per sample.
    pub sample_ids: Vec<String>,
}

impl WindowedTensor {
    /// Tensor with generated names and provenance, for synthetic data.
    pub fn from_values(h: usize, m: usize, values: Vec<f32>, labels: Vec<bool>) -> Result<Self> {
        let n = labels.len();
        if values.len() != n * h * m {
            return Err(Error::invalid(format!(
                "{} values for shape ({n}, {h}, {m})",
                values.len()
            )));
        }
        Ok(WindowedTensor {
            n,
            h,
            m,
            values,
            labels,
            feature_names: (0..m).map(|j| format!("f{j}")).collect(),
            origins: (0..n)
                .map(|i| WindowOrigin { project: "synthetic".into(), end_position: i + h - 1 })
                .collect(),
            sample_ids: (0..n).map(|i| format!("s{i}")).collect(),
        })
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.h * self.m;
        &self.values[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.h * self.m;
        &mut self.values[i * len..(i + 1) * len]
    }
}

impl Samples for WindowedTensor {
    fn len(&self) -> usize {
        self.n
    }

    fn labels(&self) -> &[bool] {
        &self.labels
    }

    fn n_features(&self) -> usize {
        self.m
    }

    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.h * self.m);
        for &i in idx {
            values.extend_from_slice(self.sample(i));
        }
        WindowedTensor {
            n: idx.len(),
            h: self.h,
            m: self.m,
            values,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            origins: idx.iter().map(|&i| self.origins[i].clone()).collect(),
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }
}

/// One row per commit, no temporal information.
pub fn snapshot_matrix(ds: &JointDataset, features: FeatureSet) -> Result<FeatureMatrix> {
    if ds.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let names = features.names(ds);
    let mut values = Vec::with_capacity(ds.len() * names.len());
    for row in &ds.rows {
        features.push_row(row, &mut values);
    }
    FeatureMatrix::new(
        names.len(),
        values,
        ds.rows.iter().map(|r| r.inducing).collect(),
        names,
        ds.rows.iter().map(|r| r.commit_hash.clone()).collect(),
    )
}

/// Number of windows a project of `n` commits yields.
pub fn window_count(n: usize, h: usize) -> usize {
    n.saturating_sub(h)
}

/// Rolling windows of `h` consecutive commits within each project, advanced
/// by `step`; the label comes from the commit following the window.
pub fn windowed_tensor(
    ds: &JointDataset,
    h: usize,
    step: usize,
    features: FeatureSet,
) -> Result<WindowedTensor> {
    if h == 0 || step == 0 {
        return Err(Error::invalid("window length and step must be at least 1"));
    }
    let names = features.names(ds);
    let m = names.len();
    let mut out = WindowedTensor {
        n: 0,
        h,
        m,
        values: Vec::new(),
        labels: Vec::new(),
        feature_names: names,
        origins: Vec::new(),
        sample_ids: Vec::new(),
    };
    let mut row_buf = Vec::with_capacity(m);
    for (project, rows) in ds.projects() {
        if rows.len() <= h {
            info!("project {project}: {} commits, too short for window {h}", rows.len());
            continue;
        }
        let mut start = 0;
        while start + h < rows.len() {
            for row in &rows[start..start + h] {
                row_buf.clear();
                features.push_row(row, &mut row_buf);
                out.values.extend(row_buf.iter().map(|&v| v as f32));
            }
            let target = &rows[start + h];
            out.labels.push(target.inducing);
            out.sample_ids.push(target.commit_hash.clone());
            out.origins.push(WindowOrigin {
                project: project.to_string(),
                end_position: rows[start + h - 1].position,
            });
            out.n += 1;
            start += step;
        }
    }
    Ok(out)
}

/// Per-feature standardization fitted on training data (all samples and
/// time steps pooled). Zero-variance features are only centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(t: &WindowedTensor) -> Self {
        let m = t.m;
        let mut sum = vec![0.0f64; m];
        let mut sq = vec![0.0f64; m];
        let count = (t.n * t.h).max(1) as f64;
        for cell in t.values.chunks_exact(m.max(1)) {
            for j in 0..m {
                let v = f64::from(cell[j]);
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(s, mu)| {
                let var = (s / count - mu * mu).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn identity(m: usize) -> Self {
        Standardizer { mean: vec![0.0; m], scale: vec![1.0; m] }
    }

    pub fn apply(&self, values: &mut [f32]) {
        let m = self.mean.len();
        for cell in values.chunks_exact_mut(m.max(1)) {
            for j in 0..m {
                cell[j] = ((f64::from(cell[j]) - self.mean[j]) / self.scale[j]) as f32;
            }
        }
    }
}
