use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use super::diff::{parse_unified_diff, FileDiff};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryCommit {
    pub hash: String,
    pub parents: Vec<String>,
    /// Epoch seconds.
    pub author_time: i64,
    pub message: String,
    /// Changes against the first parent (or against nothing for a root).
    pub file_diffs: Vec<FileDiff>,
}

/// A commit graph in topological order (parents before children).
#[derive(Debug, Clone, Default)]
pub struct History {
    commits: Vec<HistoryCommit>,
    index: HashMap<String, usize>,
    /// First-parent index per commit.
    first_parent: Vec<Option<usize>>,
}

#[derive(Deserialize)]
struct Record {
    hash: String,
    #[serde(default)]
    parents: Vec<String>,
    author_time: i64,
    #[serde(default)]
    message: String,
    #[serde(default)]
    diffs: Vec<String>,
}

impl History {
    /// Orders commits topologically; among commits whose parents are all
    /// placed, the earliest author time (then input order) goes first.
    pub fn from_commits(commits: Vec<HistoryCommit>) -> Result<Self> {
        let mut index = HashMap::with_capacity(commits.len());
        for (i, c) in commits.iter().enumerate() {
            if index.insert(c.hash.clone(), i).is_some() {
                return Err(Error::Graph(format!("duplicate commit {}", c.hash)));
            }
        }
        let mut pending = vec![0usize; commits.len()];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); commits.len()];
        for (i, c) in commits.iter().enumerate() {
            for p in &c.parents {
                let &pi = index
                    .get(p)
                    .ok_or_else(|| Error::Graph(format!("commit {} has unknown parent {p}", c.hash)))?;
                pending[i] += 1;
                children[pi].push(i);
            }
        }
        let mut ready: BinaryHeap<Reverse<(i64, usize)>> = commits
            .iter()
            .enumerate()
            .filter(|(i, _)| pending[*i] == 0)
            .map(|(i, c)| Reverse((c.author_time, i)))
            .collect();
        let mut order = Vec::with_capacity(commits.len());
        while let Some(Reverse((_, i))) = ready.pop() {
            order.push(i);
            for &child in &children[i] {
                pending[child] -= 1;
                if pending[child] == 0 {
                    ready.push(Reverse((commits[child].author_time, child)));
                }
            }
        }
        if order.len() != commits.len() {
            return Err(Error::Graph("cycle in commit graph".into()));
        }

        let mut slots: Vec<Option<HistoryCommit>> = commits.into_iter().map(Some).collect();
        let commits: Vec<HistoryCommit> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
        let index: HashMap<String, usize> =
            commits.iter().enumerate().map(|(i, c)| (c.hash.clone(), i)).collect();
        let first_parent = commits
            .iter()
            .map(|c| c.parents.first().map(|p| index[p]))
            .collect();
        Ok(History {
            commits,
            index,
            first_parent,
        })
    }

    pub fn commits(&self) -> &[HistoryCommit] {
        &self.commits
    }

    pub fn len(&self) -> usize {
        self.commits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commits.is_empty()
    }

    pub fn position(&self, hash: &str) -> Option<usize> {
        self.index.get(hash).copied()
    }

    pub fn get(&self, hash: &str) -> Option<&HistoryCommit> {
        self.position(hash).map(|i| &self.commits[i])
    }

    pub(crate) fn first_parent_of(&self, i: usize) -> Option<usize> {
        self.first_parent[i]
    }

    /// First-parent chain ending at `i`, root first.
    pub(crate) fn first_parent_chain(&self, i: usize) -> Vec<usize> {
        let mut chain = vec![i];
        let mut cur = i;
        while let Some(p) = self.first_parent[cur] {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    /// Whether `ancestor` is reachable from `descendant` through any parents
    /// (a commit counts as its own ancestor).
    pub fn is_ancestor(&self, ancestor: &str, descendant: &str) -> bool {
        let (Some(a), Some(d)) = (self.position(ancestor), self.position(descendant)) else {
            return false;
        };
        let mut stack = vec![d];
        let mut seen = vec![false; self.commits.len()];
        while let Some(i) = stack.pop() {
            if i == a {
                return true;
            }
            // Topological order: nothing at or before `a` can reach it except `a`.
            if i < a || std::mem::replace(&mut seen[i], true) {
                continue;
            }
            stack.extend(self.commits[i].parents.iter().map(|p| self.index[p]));
        }
        false
    }
}

/// Reads a line-delimited history export. Each non-blank line is one commit
/// record `{hash, parents, author_time, message, diffs}` where every entry of
/// `diffs` is unified-diff text.
pub fn parse_history(path: &Path) -> Result<History> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut commits = Vec::new();
    for (record, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::DiffParse {
            record,
            message: e.to_string(),
        })?;
        let mut file_diffs = Vec::new();
        for text in &rec.diffs {
            file_diffs.extend(
                parse_unified_diff(text).map_err(|message| Error::DiffParse { record, message })?,
            );
        }
        commits.push(HistoryCommit {
            hash: rec.hash,
            parents: rec.parents,
            author_time: rec.author_time,
            message: rec.message,
            file_diffs,
        });
    }
    History::from_commits(commits)
}
