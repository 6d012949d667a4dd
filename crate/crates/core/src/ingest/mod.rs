//! Loading the issue, measure and label tables and joining them into one
//! labeled per-commit dataset.

mod join;
mod tables;

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use join::{join_dataset, JoinStats};
pub use tables::{
    load_issues, load_labels, load_measures, load_rule_metadata, IssueTable, MeasureTable,
};

/// The 24 software metrics in canonical column order: size, complexity,
/// test coverage, duplication.
pub const METRIC_NAMES: [&str; 24] = [
    "NC", "NF", "LL", "NCLOC", "NCI", "MPI", "P", "STT", "NOF", "NOC", "NOCD", // size
    "COM", "CCOM", "FC", "COGC", "PDC", // complexity
    "COV", "LTC", "LC", "UL", // coverage
    "DL", "DB", "DF", "DLD", // duplication
];

pub const METRIC_COUNT: usize = METRIC_NAMES.len();

/// Metrics that are percentages and therefore bounded by 100.
pub const DENSITY_METRICS: [&str; 2] = ["NOCD", "DLD"];

/// Rule violations introduced by one commit, summed over files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueEvent {
    pub commit_hash: String,
    pub project: String,
    pub rule_id: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSnapshot {
    pub commit_hash: String,
    pub project: Option<String>,
    /// Commit time in epoch seconds, when the table carries one.
    pub timestamp: Option<i64>,
    /// Metric values in [`METRIC_NAMES`] order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultLabel {
    pub commit_hash: String,
    pub inducing: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMeta {
    pub rule_type: Option<String>,
    pub severity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleInfo {
    pub rule_id: String,
    /// Whether the rule carries an official `S<number>` identifier.
    pub categorized: bool,
    #[serde(flatten)]
    pub meta: RuleMeta,
}

/// Ordered rule list defining the rule-feature columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleCatalog {
    rules: Vec<RuleInfo>,
}

/// True for rule ids such as `squid:S1192`, `java:S00112` or `S134`.
pub fn is_categorized(rule_id: &str) -> bool {
    static PATTERN: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    PATTERN
        .get_or_init(|| Regex::new(r"^(?:[A-Za-z0-9_.\-]+:)?S\d+$").unwrap())
        .is_match(rule_id.trim())
}

impl RuleCatalog {
    /// Builds a catalog from the rule ids seen in the issue table, sorted
    /// lexicographically. Uncategorized rules are dropped unless
    /// `include_uncategorized` is set.
    pub fn from_rules<'a>(
        rule_ids: impl IntoIterator<Item = &'a str>,
        meta: &BTreeMap<String, RuleMeta>,
        include_uncategorized: bool,
    ) -> Self {
        let mut ids: Vec<&str> = rule_ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let rules = ids
            .into_iter()
            .map(|id| RuleInfo {
                rule_id: id.to_string(),
                categorized: is_categorized(id),
                meta: meta.get(id).cloned().unwrap_or_default(),
            })
            .filter(|r| include_uncategorized || r.categorized)
            .collect();
        RuleCatalog { rules }
    }

    /// Catalog from an explicit list; fails on duplicates.
    pub fn from_infos(rules: Vec<RuleInfo>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &rules {
            if !seen.insert(r.rule_id.as_str()) {
                return Err(Error::invalid(format!("duplicate rule id {} in catalog", r.rule_id)));
            }
        }
        Ok(RuleCatalog { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[RuleInfo] {
        &self.rules
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.rule_id.as_str())
    }

    pub fn index_of(&self, rule_id: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.rule_id == rule_id)
    }

    /// Short content hash of the column order, used to detect stale artifacts.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.rules {
            h.update(r.rule_id.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())[..16].to_string()
    }
}

/// One joined commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub commit_hash: String,
    pub project: String,
    /// Zero-based position of the commit within its project's history.
    pub position: usize,
    pub timestamp: Option<i64>,
    /// Violations per catalog rule introduced in this commit.
    pub rule_counts: Vec<u64>,
    /// Metric values in [`METRIC_NAMES`] order.
    pub metrics: Vec<f64>,
    pub inducing: bool,
}

pub const DATASET_FORMAT: &str = "faultprone.dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDataset {
    pub format: String,
    pub catalog: RuleCatalog,
    pub metric_names: Vec<String>,
    pub rows: Vec<DatasetRow>,
    pub stats: JoinStats,
}

impl JointDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.inducing).count()
    }

    /// Rows grouped by project, in dataset order.
    pub fn projects(&self) -> Vec<(&str, &[DatasetRow])> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].project != self.rows[start].project {
                out.push((self.rows[start].project.as_str(), &self.rows[start..i]));
                start = i;
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: JointDataset = serde_json::from_str(&text)?;
        if ds.format != DATASET_FORMAT {
            return Err(Error::Artifact {
                path: path.display().to_string(),
                message: format!("expected format {DATASET_FORMAT}, found {}", ds.format),
            });
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorized_ids() {
        assert!(is_categorized("squid:S1192"));
        assert!(is_categorized("squid:S00112"));
        assert!(is_categorized("S134"));
        assert!(!is_categorized("squid:RedundantThrowsDeclarationCheck"));
        assert!(!is_categorized("squid:MethodCyclomaticComplexity"));
    }

    #[test]
    fn catalog_is_sorted_and_filtered() {
        let meta = BTreeMap::new();
        let ids = ["squid:S134", "squid:S1192", "squid:ModifiersOrderCheck", "squid:S134"];
        let cat = RuleCatalog::from_rules(ids, &meta, false);
        assert_eq!(cat.ids().collect::<Vec<_>>(), vec!["squid:S1192", "squid:S134"]);
        let all = RuleCatalog::from_rules(ids, &meta, true);
        assert_eq!(all.len(), 3);
        assert_ne!(cat.digest(), all.digest());
    }

    #[test]
    fn metric_order_has_24_columns() {
        assert_eq!(METRIC_COUNT, 24);
        let mut sorted = METRIC_NAMES.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 24);
    }
}
