use std::collections::{BTreeMap, HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use super::tables::{issue_projects, IssueTable, MeasureTable};
use super::{DatasetRow, FaultLabel, JointDataset, RuleCatalog, DATASET_FORMAT, METRIC_NAMES};
use crate::error::{Error, Result};

/// Rows and values dropped or filled while joining, so that every run can be
/// audited against the source tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinStats {
    pub measure_rows: usize,
    pub issue_events_unknown_commit: usize,
    pub issue_occurrences_unknown_commit: u64,
    pub issue_events_uncataloged_rule: usize,
    pub issue_occurrences_uncataloged_rule: u64,
    pub labels_unknown_commit: usize,
    pub filled_metric_cells: u64,
    pub inducing_rows: usize,
}

/// Joins measures, issues and labels on the commit hash. The result has one
/// row per measure snapshot, sorted by project then commit time (file order
/// breaks ties and stands in for missing times).
pub fn join_dataset(
    issues: &IssueTable,
    measures: &MeasureTable,
    labels: &[FaultLabel],
    catalog: &RuleCatalog,
) -> Result<JointDataset> {
    let mut stats = JoinStats {
        measure_rows: measures.snapshots.len(),
        filled_metric_cells: measures.filled_cells,
        ..JoinStats::default()
    };

    let mut index: HashMap<&str, usize> = HashMap::with_capacity(measures.snapshots.len());
    for (i, m) in measures.snapshots.iter().enumerate() {
        if index.insert(m.commit_hash.as_str(), i).is_some() {
            return Err(Error::DuplicateCommit(m.commit_hash.clone()));
        }
    }

    let columns: HashMap<&str, usize> = catalog.ids().enumerate().map(|(i, id)| (id, i)).collect();
    let mut counts = vec![vec![0u64; catalog.len()]; measures.snapshots.len()];
    for e in &issues.events {
        let Some(&row) = index.get(e.commit_hash.as_str()) else {
            stats.issue_events_unknown_commit += 1;
            stats.issue_occurrences_unknown_commit += e.count;
            continue;
        };
        match columns.get(e.rule_id.as_str()) {
            Some(&col) => counts[row][col] += e.count,
            None => {
                stats.issue_events_uncataloged_rule += 1;
                stats.issue_occurrences_uncataloged_rule += e.count;
            }
        }
    }
    if stats.issue_events_unknown_commit > 0 {
        warn!(
            "dropped {} issue events ({} occurrences) referencing commits without measures",
            stats.issue_events_unknown_commit, stats.issue_occurrences_unknown_commit
        );
    }

    let mut inducing = HashSet::new();
    for l in labels {
        if !index.contains_key(l.commit_hash.as_str()) {
            stats.labels_unknown_commit += 1;
        } else if l.inducing {
            inducing.insert(l.commit_hash.as_str());
        }
    }
    if stats.labels_unknown_commit > 0 {
        warn!("{} labels reference commits without measures", stats.labels_unknown_commit);
    }

    let projects = issue_projects(issues);
    let mut rows: Vec<(usize, DatasetRow)> = measures
        .snapshots
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(i, (m, rule_counts))| {
            let project = m
                .project
                .clone()
                .or_else(|| projects.get(m.commit_hash.as_str()).map(|p| p.to_string()))
                .unwrap_or_else(|| "unknown".to_string());
            (
                i,
                DatasetRow {
                    commit_hash: m.commit_hash.clone(),
                    project,
                    position: 0,
                    timestamp: m.timestamp,
                    rule_counts,
                    metrics: m.values.clone(),
                    inducing: inducing.contains(m.commit_hash.as_str()),
                },
            )
        })
        .collect();
    rows.sort_by(|(ia, a), (ib, b)| {
        (&a.project, a.timestamp.unwrap_or(i64::MAX), ia).cmp(&(
            &b.project,
            b.timestamp.unwrap_or(i64::MAX),
            ib,
        ))
    });

    let mut next_position: BTreeMap<String, usize> = BTreeMap::new();
    let rows: Vec<DatasetRow> = rows
        .into_iter()
        .map(|(_, mut r)| {
            let p = next_position.entry(r.project.clone()).or_insert(0);
            r.position = *p;
            *p += 1;
            r
        })
        .collect();
    stats.inducing_rows = rows.iter().filter(|r| r.inducing).count();

    Ok(JointDataset {
        format: DATASET_FORMAT.to_string(),
        catalog: catalog.clone(),
        metric_names: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
        stats,
    })
}
