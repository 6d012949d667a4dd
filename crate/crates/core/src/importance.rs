//! Permutation feature importance: the drop in AUC when one feature's values
//! are shuffled across samples, with the model left untouched.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::featurize::{FeatureMatrix, Samples, WindowedTensor};
use crate::ingest::RuleMeta;
use crate::model::Scorer;
use crate::seed;

/// What moves when a windowed feature is permuted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationUnit {
    /// Each sample's whole time slice of the feature moves together.
    #[default]
    Slice,
    /// Every (sample, step) cell is shuffled independently.
    Cell,
}

/// Data whose feature columns can be permuted.
pub trait Permute: Samples + Clone {
    /// A copy with feature `j` permuted; everything else untouched.
    fn permute_feature(&self, j: usize, seed: u64, unit: PermutationUnit) -> Result<Self>;
}

/// A seeded shuffle of 0..n that is never the identity when n > 5.
fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(&mut rng);
        if n <= 5 || perm.iter().enumerate().any(|(i, &p)| i != p) {
            return perm;
        }
    }
}

fn check_index(j: usize, m: usize) -> Result<()> {
    if j >= m {
        return Err(Error::invalid(format!("feature index {j} out of range for {m} features")));
    }
    Ok(())
}

impl Permute for FeatureMatrix {
    fn permute_feature(&self, j: usize, seed: u64, _unit: PermutationUnit) -> Result<Self> {
        check_index(j, self.m)?;
        let perm = shuffled(self.n, seed);
        let mut out = self.clone();
        for (i, &src) in perm.iter().enumerate() {
            out.set(i, j, self.get(src, j));
        }
        Ok(out)
    }
}

impl Permute for WindowedTensor {
    fn permute_feature(&self, j: usize, seed: u64, unit: PermutationUnit) -> Result<Self> {
        check_index(j, self.m)?;
        let (h, m) = (self.h, self.m);
        let mut out = self.clone();
        match unit {
            PermutationUnit::Slice => {
                let perm = shuffled(self.n, seed);
                for (i, &src) in perm.iter().enumerate() {
                    for t in 0..h {
                        out.values[(i * h + t) * m + j] = self.values[(src * h + t) * m + j];
                    }
                }
            }
            PermutationUnit::Cell => {
                let perm = shuffled(self.n * h, seed);
                for (cell, &src) in perm.iter().enumerate() {
                    out.values[cell * m + j] = self.values[src * m + j];
                }
            }
        }
        Ok(out)
    }
}

/// ΔAUC per feature for one model, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub model: String,
    /// AUC on the unpermuted data, in percent.
    pub baseline_auc: f64,
    pub feature_names: Vec<String>,
    /// Mean over repeats of baseline AUC − permuted AUC.
    pub importance: Vec<f64>,
    pub seed: u64,
    pub repeats: usize,
    pub unit: PermutationUnit,
}

/// Permutes each feature `repeats` times and averages the AUC drop. The
/// seed for feature `j`, repeat `r` is derived from `seed`, `j` and `r`.
pub fn permutation_importance<D: Permute>(
    model_id: &str,
    model: &dyn Scorer<D>,
    data: &D,
    seed: u64,
    repeats: usize,
    unit: PermutationUnit,
) -> Result<FeatureImportance> {
    if repeats == 0 {
        return Err(Error::invalid("at least one permutation repeat is needed"));
    }
    let labels = data.labels();
    let (_, baseline) = roc_auc(&model.score(data)?, labels)?;
    let importance = (0..data.n_features())
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let feature_seed = seed::derive(seed, seed::stream::PERMUTATION, j as u64);
            let mut drop = 0.0;
            for r in 0..repeats {
                let s = seed::derive(feature_seed, seed::stream::PERMUTATION, r as u64);
                let permuted = data.permute_feature(j, s, unit)?;
                let (_, auc) = roc_auc(&model.score(&permuted)?, labels)?;
                drop += baseline - auc;
            }
            Ok(100.0 * drop / repeats as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FeatureImportance {
        model: model_id.into(),
        baseline_auc: 100.0 * baseline,
        feature_names: data.feature_names().to_vec(),
        importance,
        seed,
        repeats,
        unit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub rule_type: Option<String>,
    pub severity: Option<String>,
    /// One entry per model, in `ImportanceRanking::models` order.
    pub importance: Vec<f64>,
    /// 1-based rank by the reference model's importance.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub models: Vec<String>,
    pub baseline_auc: Vec<f64>,
    pub reference_model: String,
    /// Which samples the permutations were scored on.
    pub evaluation_set: String,
    pub seed: u64,
    pub repeats: usize,
    /// Sorted by rank.
    pub features: Vec<RankedFeature>,
}

/// Merges per-model importances and ranks features by the importance given
/// by the model with the highest `aggregate_auc` (ties broken by feature
/// name).
pub fn rank_features(
    results: &[FeatureImportance],
    aggregate_auc: &BTreeMap<String, f64>,
    meta: &BTreeMap<String, RuleMeta>,
    evaluation_set: &str,
) -> Result<ImportanceRanking> {
    let first = results.first().ok_or_else(|| Error::invalid("no importance results to rank"))?;
    if results.iter().any(|r| r.feature_names != first.feature_names) {
        return Err(Error::invalid("importance results cover different features"));
    }
    let reference = results
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            let auc = |r: &FeatureImportance| aggregate_auc.get(&r.model).copied().unwrap_or(r.baseline_auc);
            auc(a).total_cmp(&auc(b)).then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .unwrap();
    let mut features: Vec<RankedFeature> = first
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let m = meta.get(name).cloned().unwrap_or_default();
            RankedFeature {
                name: name.clone(),
                rule_type: m.rule_type,
                severity: m.severity,
                importance: results.iter().map(|r| r.importance[j]).collect(),
                rank: 0,
            }
        })
        .collect();
    features.sort_by(|a, b| {
        b.importance[reference].total_cmp(&a.importance[reference]).then_with(|| a.name.cmp(&b.name))
    });
    for (i, f) in features.iter_mut().enumerate() {
        f.rank = i + 1;
    }
    Ok(ImportanceRanking {
        models: results.iter().map(|r| r.model.clone()).collect(),
        baseline_auc: results.iter().map(|r| r.baseline_auc).collect(),
        reference_model: results[reference].model.clone(),
        evaluation_set: evaluation_set.into(),
        seed: first.seed,
        repeats: first.repeats,
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredRanking {
    pub cutoff: f64,
    pub reference_model: String,
    pub retained: Vec<RankedFeature>,
    pub below_cutoff: usize,
    /// Reference-model importance of the retained rows over the sum of all
    /// positive reference importances.
    pub cumulative_share: f64,
}

/// Keeps features whose reference importance is at least `cutoff`
/// percentage points.
pub fn rank_and_filter(ranking: &ImportanceRanking, cutoff: f64) -> Result<FilteredRanking> {
    if !(cutoff >= 0.0) {
        return Err(Error::invalid(format!("cutoff {cutoff} must be non-negative")));
    }
    if ranking.features.is_empty() {
        return Err(Error::invalid("empty ranking"));
    }
    let r = ranking.models.iter().position(|m| *m == ranking.reference_model).unwrap_or(0);
    let retained: Vec<RankedFeature> =
        ranking.features.iter().filter(|f| f.importance[r] >= cutoff).cloned().collect();
    let positive: f64 = ranking.features.iter().map(|f| f.importance[r].max(0.0)).sum();
    let kept: f64 = retained.iter().map(|f| f.importance[r]).sum();
    Ok(FilteredRanking {
        cutoff,
        reference_model: ranking.reference_model.clone(),
        below_cutoff: ranking.features.len() - retained.len(),
        cumulative_share: if positive > 0.0 { kept / positive } else { 0.0 },
        retained,
    })
}

fn csv_row(out: &mut String, f: &RankedFeature) {
    let field = |s: &str| {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    };
    write!(
        out,
        "{},{},{}",
        field(&f.name),
        field(f.rule_type.as_deref().unwrap_or("")),
        field(f.severity.as_deref().unwrap_or(""))
    )
    .unwrap();
    for v in &f.importance {
        write!(out, ",{v:.2}").unwrap();
    }
    writeln!(out, ",{}", f.rank).unwrap();
}

fn csv_header(models: &[String]) -> String {
    format!("feature,type,severity,{},rank\n", models.join(","))
}

/// Every feature: name, type, severity, one importance column per model, rank.
pub fn ranking_csv(ranking: &ImportanceRanking) -> String {
    let mut out = csv_header(&ranking.models);
    for f in &ranking.features {
        csv_row(&mut out, f);
    }
    out
}

/// Retained rows followed by one summary row for the rest.
pub fn filtered_csv(ranking: &ImportanceRanking, filtered: &FilteredRanking) -> String {
    let mut out = csv_header(&ranking.models);
    for f in &filtered.retained {
        csv_row(&mut out, f);
    }
    writeln!(
        out,
        "({} features below {:.2}),,{},",
        filtered.below_cutoff,
        filtered.cutoff,
        ",".repeat(ranking.models.len().saturating_sub(1))
    )
    .unwrap();
    out
}
