//! SZZ: find fix commits, blame the lines they delete or modify, and label
//! the commits that introduced those lines as fault-inducing.
//!
//! This is the baseline variant. Blame is reconstructed by replaying diffs
//! along the first-parent chain, so a merge commit is blamed for lines it
//! brings in from its other parents.

pub mod diff;
mod history;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FaultLabel;

pub use diff::{FileDiff, Hunk, HunkLine, LineKind};
pub use history::{parse_history, History, HistoryCommit};

/// Content of one file at one commit, with the introducing commit of each line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineProvenance {
    pub path: String,
    pub commit: String,
    pub lines: Vec<String>,
    pub origins: Vec<String>,
}

struct FileState {
    lines: Vec<String>,
    origins: Vec<usize>,
}

fn replay(history: &History, path: &str, at: usize) -> Result<Option<FileState>> {
    let mut state: Option<FileState> = None;
    for ci in history.first_parent_chain(at) {
        let commit = &history.commits()[ci];
        for fd in commit.file_diffs.iter().filter(|d| d.touches(path)) {
            let base = match (fd.old_path.as_deref(), state.take()) {
                (None, None) => FileState { lines: Vec::new(), origins: Vec::new() },
                (None, Some(_)) => {
                    return Err(Error::Corruption(format!(
                        "{}: {path} created but already exists",
                        commit.hash
                    )))
                }
                (Some(old), Some(s)) if old == path => s,
                (Some(old), None) if old == path => {
                    return Err(Error::Corruption(format!(
                        "{}: {path} modified but does not exist",
                        commit.hash
                    )))
                }
                // Renamed into `path`: start from the source file at the parent.
                (Some(old), _) => match history.first_parent_of(ci) {
                    Some(p) => replay(history, old, p)?.ok_or_else(|| {
                        Error::Corruption(format!("{}: rename source {old} missing", commit.hash))
                    })?,
                    None => {
                        return Err(Error::Corruption(format!(
                            "{}: rename source {old} in a root commit",
                            commit.hash
                        )))
                    }
                },
            };
            let (lines, origins) = diff::apply(&base.lines, &base.origins, fd, ci)
                .map_err(|m| Error::Corruption(format!("{} {path}: {m}", commit.hash)))?;
            state = match fd.new_path.as_deref() {
                Some(new) if new == path => Some(FileState { lines, origins }),
                _ => None,
            };
        }
    }
    Ok(state)
}

/// Reconstructs `path` at commit `at` and the commit that introduced each line.
pub fn annotate(history: &History, path: &str, at: &str) -> Result<LineProvenance> {
    let idx = history
        .position(at)
        .ok_or_else(|| Error::NotFound(format!("commit {at}")))?;
    let state = replay(history, path, idx)?
        .ok_or_else(|| Error::NotFound(format!("{path} at {at}")))?;
    Ok(LineProvenance {
        path: path.to_string(),
        commit: at.to_string(),
        origins: state
            .origins
            .iter()
            .map(|&i| history.commits()[i].hash.clone())
            .collect(),
        lines: state.lines,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixCommit {
    pub hash: String,
    /// Bug-report time in epoch seconds; no temporal filter when absent.
    pub report_time: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixSet {
    pub fixes: Vec<FixCommit>,
}

impl FixSet {
    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }

    pub fn hashes(&self) -> Vec<&str> {
        self.fixes.iter().map(|f| f.hash.as_str()).collect()
    }
}

/// Fix commits are those whose message matches `issue_pattern`, plus the
/// `explicit` hashes. Each carries its own commit time as report time.
pub fn identify_fix_commits(
    history: &History,
    issue_pattern: &str,
    explicit: &[String],
) -> Result<FixSet> {
    let re = Regex::new(issue_pattern)
        .map_err(|e| Error::invalid(format!("bad issue pattern: {e}")))?;
    let mut chosen = BTreeSet::new();
    for h in explicit {
        let i = history
            .position(h)
            .ok_or_else(|| Error::NotFound(format!("explicit fix commit {h} not in history")))?;
        chosen.insert(i);
    }
    for (i, c) in history.commits().iter().enumerate() {
        if re.is_match(&c.message) {
            chosen.insert(i);
        }
    }
    if chosen.is_empty() {
        warn!("no fix commits matched `{issue_pattern}`");
    }
    Ok(FixSet {
        fixes: chosen
            .into_iter()
            .map(|i| {
                let c = &history.commits()[i];
                FixCommit {
                    hash: c.hash.clone(),
                    report_time: Some(c.author_time),
                }
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SzzOptions {
    /// Discard candidates authored after the fix's bug-report time.
    pub filter_by_report_time: bool,
    /// Skip removed lines that are blank, comment-only, or reappear in the
    /// same hunk with only whitespace changes.
    pub ignore_cosmetic: bool,
}

impl Default for SzzOptions {
    fn default() -> Self {
        SzzOptions {
            filter_by_report_time: true,
            ignore_cosmetic: false,
        }
    }
}

fn is_cosmetic(line: &str, hunk: &Hunk) -> bool {
    let t = line.trim();
    if t.is_empty() || t.starts_with("//") || t.starts_with("/*") || t.starts_with('*') || t.starts_with('#') {
        return true;
    }
    let squash = |s: &str| s.split_whitespace().collect::<String>();
    let target = squash(t);
    hunk.added().any(|a| squash(a) == target)
}

/// (inducing commit, fix commit) pairs found by blaming every line the fix
/// deletes or modifies in the fix's first parent.
pub fn locate_inducing_pairs(
    history: &History,
    fixes: &FixSet,
    options: SzzOptions,
) -> Result<BTreeSet<(usize, usize)>> {
    if fixes.is_empty() {
        return Err(Error::invalid("no fix commits to trace"));
    }
    let mut pairs = BTreeSet::new();
    for fix in &fixes.fixes {
        let fi = history
            .position(&fix.hash)
            .ok_or_else(|| Error::NotFound(format!("fix commit {}", fix.hash)))?;
        let Some(parent) = history.first_parent_of(fi) else {
            warn!("fix commit {} has no parent; nothing to blame", fix.hash);
            continue;
        };
        let commit = &history.commits()[fi];
        let blamed: Vec<BTreeSet<usize>> = commit
            .file_diffs
            .par_iter()
            .filter_map(|fd| fd.old_path.as_deref().map(|p| (p, fd)))
            .map(|(path, fd)| -> Result<BTreeSet<usize>> {
                let mut out = BTreeSet::new();
                if fd.hunks.iter().all(|h| h.removed().next().is_none()) {
                    return Ok(out);
                }
                let state = replay(history, path, parent)?.ok_or_else(|| {
                    Error::Corruption(format!("{}: {path} missing in parent", fix.hash))
                })?;
                for hunk in &fd.hunks {
                    for (n, text) in hunk.removed_line_numbers().into_iter().zip(hunk.removed()) {
                        if options.ignore_cosmetic && is_cosmetic(text, hunk) {
                            continue;
                        }
                        let origin = *state.origins.get(n - 1).ok_or_else(|| {
                            Error::Corruption(format!("{}: {path} has no line {n}", fix.hash))
                        })?;
                        out.insert(origin);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for origin in blamed.into_iter().flatten() {
            let candidate = &history.commits()[origin];
            if options.filter_by_report_time {
                if let Some(t) = fix.report_time {
                    if candidate.author_time > t {
                        continue;
                    }
                }
            }
            pairs.insert((origin, fi));
        }
    }
    Ok(pairs)
}

/// Deduplicated fault-inducing commits, in history order.
pub fn locate_inducing(
    history: &History,
    fixes: &FixSet,
    options: SzzOptions,
) -> Result<Vec<FaultLabel>> {
    let pairs = locate_inducing_pairs(history, fixes, options)?;
    let inducing: BTreeSet<usize> = pairs.into_iter().map(|(i, _)| i).collect();
    Ok(inducing
        .into_iter()
        .map(|i| FaultLabel {
            commit_hash: history.commits()[i].hash.clone(),
            inducing: true,
        })
        .collect())
}

/// Writes the labels table read by [`crate::ingest::load_labels`]:
/// `commit_hash,inducing,fixed_by` with fix hashes separated by `;`.
pub fn write_labels(
    path: &Path,
    history: &History,
    pairs: &BTreeSet<(usize, usize)>,
) -> Result<()> {
    let mut by_inducing: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for &(i, f) in pairs {
        by_inducing
            .entry(i)
            .or_default()
            .push(history.commits()[f].hash.as_str());
    }
    let mut out = String::from("commit_hash,inducing,fixed_by\n");
    for (i, fixes) in by_inducing {
        out.push_str(&format!("{},true,{}\n", history.commits()[i].hash, fixes.join(";")));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commit(hash: &str, parent: Option<&str>, t: i64, msg: &str, diff: &str) -> HistoryCommit {
        HistoryCommit {
            hash: hash.into(),
            parents: parent.into_iter().map(String::from).collect(),
            author_time: t,
            message: msg.into(),
            file_diffs: diff::parse_unified_diff(diff).unwrap(),
        }
    }

    fn small() -> History {
        History::from_commits(vec![
            commit("c1", None, 1, "init", "--- /dev/null\n+++ b/f\n@@ -0,0 +1,3 @@\n+a\n+b\n+c\n"),
            commit("c2", Some("c1"), 2, "tweak", "--- a/f\n+++ b/f\n@@ -2 +2 @@\n-b\n+B\n"),
            commit("c3", Some("c2"), 3, "Fix BUG-1", "--- a/f\n+++ b/f\n@@ -2 +2 @@\n-B\n+b2\n"),
            commit("c4", Some("c3"), 4, "Fix BUG-2 add", "--- a/f\n+++ b/f\n@@ -3,0 +4 @@\n+d\n"),
        ])
        .unwrap()
    }

    #[test]
    fn untouched_file_maps_to_creator() {
        let h = small();
        let p = annotate(&h, "f", "c1").unwrap();
        assert_eq!(p.origins, vec!["c1"; 3]);
    }

    #[test]
    fn single_line_rewrite() {
        let h = small();
        let p = annotate(&h, "f", "c2").unwrap();
        assert_eq!(p.origins, vec!["c1", "c2", "c1"]);
        assert_eq!(p.lines, vec!["a", "B", "c"]);
    }

    #[test]
    fn missing_file_is_not_found() {
        let h = small();
        assert!(matches!(annotate(&h, "nope", "c2"), Err(Error::NotFound(_))));
        assert!(matches!(annotate(&h, "f", "zz"), Err(Error::NotFound(_))));
    }

    #[test]
    fn fix_blames_deleted_line_origin() {
        let h = small();
        let fixes = FixSet { fixes: vec![FixCommit { hash: "c3".into(), report_time: None }] };
        let labels = locate_inducing(&h, &fixes, SzzOptions::default()).unwrap();
        assert_eq!(labels.iter().map(|l| l.commit_hash.as_str()).collect::<Vec<_>>(), vec!["c2"]);
    }

    #[test]
    fn pure_addition_fix_blames_nothing() {
        let h = small();
        let fixes = FixSet { fixes: vec![FixCommit { hash: "c4".into(), report_time: None }] };
        assert!(locate_inducing(&h, &fixes, SzzOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn report_time_filter_drops_late_candidates() {
        let h = small();
        let fixes = FixSet { fixes: vec![FixCommit { hash: "c3".into(), report_time: Some(1) }] };
        assert!(locate_inducing(&h, &fixes, SzzOptions::default()).unwrap().is_empty());
        let off = SzzOptions { filter_by_report_time: false, ..Default::default() };
        assert_eq!(locate_inducing(&h, &fixes, off).unwrap().len(), 1);
    }

    #[test]
    fn pattern_and_explicit_fixes() {
        let h = small();
        let f = identify_fix_commits(&h, r"BUG-\d+", &[]).unwrap();
        assert_eq!(f.hashes(), vec!["c3", "c4"]);
        let f = identify_fix_commits(&h, r"NOPE-\d+", &["c2".to_string()]).unwrap();
        assert_eq!(f.hashes(), vec!["c2"]);
        assert_eq!(f.fixes[0].report_time, Some(2));
        assert!(identify_fix_commits(&h, r"NOPE", &[]).unwrap().is_empty());
        assert!(identify_fix_commits(&h, r"x", &["zz".to_string()]).is_err());
        assert!(identify_fix_commits(&h, r"(", &[]).is_err());
    }

    #[test]
    fn root_fix_is_skipped() {
        let h = small();
        let fixes = FixSet { fixes: vec![FixCommit { hash: "c1".into(), report_time: None }] };
        assert!(locate_inducing(&h, &fixes, SzzOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn cosmetic_filter() {
        let h = History::from_commits(vec![
            commit("c1", None, 1, "", "--- /dev/null\n+++ b/f\n@@ -0,0 +1,2 @@\n+x = 1\n+// note\n"),
            commit("c2", Some("c1"), 2, "", "--- a/f\n+++ b/f\n@@ -1,2 +1,2 @@\n-x = 1\n-// note\n+x  =  1\n+// other\n"),
        ])
        .unwrap();
        let fixes = FixSet { fixes: vec![FixCommit { hash: "c2".into(), report_time: None }] };
        assert_eq!(locate_inducing(&h, &fixes, SzzOptions::default()).unwrap().len(), 1);
        let opts = SzzOptions { ignore_cosmetic: true, ..Default::default() };
        assert!(locate_inducing(&h, &fixes, opts).unwrap().is_empty());
    }

    #[test]
    fn replay_mismatch_is_corruption() {
        let h = History::from_commits(vec![
            commit("c1", None, 1, "", "--- /dev/null\n+++ b/f\n@@ -0,0 +1 @@\n+a\n"),
            commit("c2", Some("c1"), 2, "", "--- a/f\n+++ b/f\n@@ -1 +1 @@\n-zzz\n+b\n"),
        ])
        .unwrap();
        assert!(matches!(annotate(&h, "f", "c2"), Err(Error::Corruption(_))));
    }
}
