use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use log::{info, warn};

use super::{
    FaultLabel, IssueEvent, MeasureSnapshot, RuleMeta, DENSITY_METRICS, METRIC_COUNT,
    METRIC_NAMES,
};
use crate::error::{Error, Result};

/// Aggregated issue table plus what was learned about each rule on the way.
#[derive(Debug, Clone, Default)]
pub struct IssueTable {
    /// One event per (commit, rule), sorted by commit hash then rule id.
    pub events: Vec<IssueEvent>,
    /// Rule type and severity, when the table carries them.
    pub rule_meta: BTreeMap<String, RuleMeta>,
    pub raw_rows: u64,
    pub raw_occurrences: u64,
}

impl IssueTable {
    pub fn total_occurrences(&self) -> u64 {
        self.events.iter().map(|e| e.count).sum()
    }

    pub fn rule_ids(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.rule_id.as_str())
    }
}

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn sniff_delimiter(path: &Path) -> Result<u8> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text.lines().next().unwrap_or("");
    let count = |c: char| header.matches(c).count();
    Ok(if count('\t') > 0 {
        b'\t'
    } else if count(';') > count(',') {
        b';'
    } else {
        b','
    })
}

struct Table {
    file: String,
    headers: Vec<String>,
    reader: csv::Reader<File>,
}

impl Table {
    fn open(path: &Path) -> Result<Self> {
        let delimiter = sniff_delimiter(path)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .flexible(false)
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader.headers()?.iter().map(normalize).collect();
        Ok(Table {
            file: path.display().to_string(),
            headers,
            reader,
        })
    }

    fn find(&self, aliases: &[&str]) -> Option<usize> {
        aliases
            .iter()
            .find_map(|a| self.headers.iter().position(|h| h == a))
    }

    fn require(&self, column: &str, aliases: &[&str]) -> Result<usize> {
        self.find(aliases).ok_or_else(|| Error::Schema {
            file: self.file.clone(),
            message: format!("missing column `{column}`"),
        })
    }

    fn row_error(&self, line: u64, message: String) -> Error {
        Error::Row {
            file: self.file.clone(),
            line,
            message,
        }
    }
}

const COMMIT_ALIASES: &[&str] = &["commithash", "creationcommithash", "hash", "commit", "revision"];
const PROJECT_ALIASES: &[&str] = &["project", "projectid", "projectname"];
const RULE_ALIASES: &[&str] = &["ruleid", "rule", "rulekey"];
const COUNT_ALIASES: &[&str] = &["count", "occurrences", "violations"];
const TIME_ALIASES: &[&str] = &[
    "committime",
    "commitdate",
    "authortime",
    "authordate",
    "timestamp",
    "date",
    "sqanalysisdate",
    "analysisdate",
];

/// Loads a per-file (or already per-commit) issue table and sums the
/// violation counts for every (commit, rule) pair. Rows without a count
/// column count as one violation each.
pub fn load_issues(path: &Path) -> Result<IssueTable> {
    let mut table = Table::open(path)?;
    let commit = table.require("commit_hash", COMMIT_ALIASES)?;
    let project = table.require("project", PROJECT_ALIASES)?;
    let rule = table.require("rule_id", RULE_ALIASES)?;
    let count = table.find(COUNT_ALIASES);
    let rule_type = table.find(&["type", "ruletype"]);
    let severity = table.find(&["severity"]);

    let mut sums: BTreeMap<(String, String), (String, u64)> = BTreeMap::new();
    let mut out = IssueTable::default();
    let mut records = csv::StringRecord::new();
    while table.reader.read_record(&mut records)? {
        let line = records.position().map_or(0, |p| p.line());
        let n = match count {
            Some(c) => records[c].parse::<u64>().map_err(|_| {
                table.row_error(line, format!("non-numeric count `{}`", &records[c]))
            })?,
            None => 1,
        };
        let key = (records[commit].to_string(), records[rule].to_string());
        if key.0.is_empty() || key.1.is_empty() {
            return Err(table.row_error(line, "empty commit hash or rule id".into()));
        }
        let meta = out.rule_meta.entry(key.1.clone()).or_default();
        if meta.rule_type.is_none() {
            meta.rule_type = rule_type.map(|c| records[c].to_string()).filter(|s| !s.is_empty());
        }
        if meta.severity.is_none() {
            meta.severity = severity.map(|c| records[c].to_string()).filter(|s| !s.is_empty());
        }
        let entry = sums
            .entry(key)
            .or_insert_with(|| (records[project].to_string(), 0));
        entry.1 += n;
        out.raw_rows += 1;
        out.raw_occurrences += n;
    }
    out.events = sums
        .into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|((commit_hash, rule_id), (project, count))| IssueEvent {
            commit_hash,
            project,
            rule_id,
            count,
        })
        .collect();
    info!(
        "{}: {} rows, {} occurrences, {} (commit, rule) events",
        table.file,
        out.raw_rows,
        out.raw_occurrences,
        out.events.len()
    );
    Ok(out)
}

fn metric_aliases(name: &str) -> &'static [&'static str] {
    match name {
        "NC" => &["classes"],
        "NF" => &["files"],
        "LL" => &["lines"],
        "NCLOC" => &["ncloc"],
        "NCI" => &["javaclassesandinterfaces", "classesandinterfaces"],
        "MPI" => &["missingpackageinfo"],
        "P" => &["packages", "directories"],
        "STT" => &["statements"],
        "NOF" => &["functions"],
        "NOC" => &["commentlines"],
        "NOCD" => &["commentlinesdensity"],
        "COM" => &["complexity"],
        "CCOM" => &["classcomplexity"],
        "FC" => &["functioncomplexity"],
        "COGC" => &["cognitivecomplexity"],
        "PDC" => &["packagedependencycycles", "packagetangles"],
        "COV" => &["coverage"],
        "LTC" => &["linestocover"],
        "LC" => &["linecoverage"],
        "UL" => &["uncoveredlines"],
        "DL" => &["duplicatedlines"],
        "DB" => &["duplicatedblocks"],
        "DF" => &["duplicatedfiles"],
        "DLD" => &["duplicatedlinesdensity"],
        _ => &[],
    }
}

/// Parses epoch seconds or a handful of common date-time layouts.
pub(crate) fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    if let Ok(dt) = DateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S %z") {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// Result of [`load_measures`]: snapshots plus the number of empty cells
/// that were filled with zero.
#[derive(Debug, Clone, Default)]
pub struct MeasureTable {
    pub snapshots: Vec<MeasureSnapshot>,
    pub filled_cells: u64,
}

/// Loads the metric table, reordering columns into [`METRIC_NAMES`] order.
/// Empty cells become 0 and are counted; every value must be finite and
/// non-negative, and densities must not exceed 100.
pub fn load_measures(path: &Path) -> Result<MeasureTable> {
    let mut table = Table::open(path)?;
    let commit = table.require("commit_hash", COMMIT_ALIASES)?;
    let project = table.find(PROJECT_ALIASES);
    let time = table.find(TIME_ALIASES);

    let mut columns = Vec::with_capacity(METRIC_COUNT);
    let mut missing = Vec::new();
    for name in METRIC_NAMES {
        let lower = name.to_ascii_lowercase();
        let mut aliases = vec![lower.as_str()];
        aliases.extend_from_slice(metric_aliases(name));
        match table.find(&aliases) {
            Some(c) => columns.push(c),
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema {
            file: table.file.clone(),
            message: format!(
                "found {} of {METRIC_COUNT} metric columns; missing {}",
                METRIC_COUNT - missing.len(),
                missing.join(", ")
            ),
        });
    }

    let mut out = MeasureTable::default();
    let mut records = csv::StringRecord::new();
    while table.reader.read_record(&mut records)? {
        let line = records.position().map_or(0, |p| p.line());
        let mut values = Vec::with_capacity(METRIC_COUNT);
        for (name, &c) in METRIC_NAMES.iter().zip(&columns) {
            let cell = &records[c];
            let v = if cell.is_empty() {
                out.filled_cells += 1;
                0.0
            } else {
                cell.parse::<f64>().map_err(|_| {
                    table.row_error(line, format!("non-numeric value `{cell}` for {name}"))
                })?
            };
            if !v.is_finite() || v < 0.0 || (DENSITY_METRICS.contains(name) && v > 100.0) {
                return Err(table.row_error(line, format!("{name}={v} out of bounds")));
            }
            values.push(v);
        }
        let timestamp = match time.map(|c| &records[c]).filter(|s| !s.is_empty()) {
            Some(s) => Some(
                parse_timestamp(s)
                    .ok_or_else(|| table.row_error(line, format!("unparseable time `{s}`")))?,
            ),
            None => None,
        };
        out.snapshots.push(MeasureSnapshot {
            commit_hash: records[commit].to_string(),
            project: project.map(|c| records[c].to_string()).filter(|s| !s.is_empty()),
            timestamp,
            values,
        });
    }
    if out.filled_cells > 0 {
        warn!("{}: filled {} empty metric cells with 0", table.file, out.filled_cells);
    }
    Ok(out)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Some(true),
        "0" | "false" | "f" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Loads fault labels. Without an `inducing` column every listed commit is
/// inducing; a commit listed several times is inducing if any row says so.
pub fn load_labels(path: &Path) -> Result<Vec<FaultLabel>> {
    let mut table = Table::open(path)?;
    let commit = table.require(
        "commit_hash",
        &["commithash", "faultinducingcommithash", "inducingcommithash", "hash", "commit"],
    )?;
    let inducing = table.find(&["inducing", "isinducing", "label"]);
    let mut labels: BTreeMap<String, bool> = BTreeMap::new();
    let mut records = csv::StringRecord::new();
    while table.reader.read_record(&mut records)? {
        let line = records.position().map_or(0, |p| p.line());
        let flag = match inducing {
            Some(c) => parse_bool(&records[c]).ok_or_else(|| {
                table.row_error(line, format!("not a boolean: `{}`", &records[c]))
            })?,
            None => true,
        };
        *labels.entry(records[commit].to_string()).or_insert(false) |= flag;
    }
    Ok(labels
        .into_iter()
        .map(|(commit_hash, inducing)| FaultLabel {
            commit_hash,
            inducing,
        })
        .collect())
}

/// Optional rule metadata table: `rule_id, type, severity`.
pub fn load_rule_metadata(path: &Path) -> Result<BTreeMap<String, RuleMeta>> {
    let mut table = Table::open(path)?;
    let rule = table.require("rule_id", RULE_ALIASES)?;
    let rule_type = table.find(&["type", "ruletype"]);
    let severity = table.find(&["severity"]);
    let mut out = BTreeMap::new();
    let mut records = csv::StringRecord::new();
    while table.reader.read_record(&mut records)? {
        let pick = |c: Option<usize>| c.map(|c| records[c].to_string()).filter(|s| !s.is_empty());
        out.insert(
            records[rule].to_string(),
            RuleMeta {
                rule_type: pick(rule_type),
                severity: pick(severity),
            },
        );
    }
    Ok(out)
}

/// Project per commit as recorded in the issue table.
pub(crate) fn issue_projects(issues: &IssueTable) -> HashMap<&str, &str> {
    issues
        .events
        .iter()
        .map(|e| (e.commit_hash.as_str(), e.project.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn measures_header() -> String {
        format!("commit_hash,project,{}", METRIC_NAMES.join(","))
    }

    #[test]
    fn issues_are_summed_per_commit_and_rule() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "issues.csv",
            "commit_hash,project,rule_id,file,count\n\
             c1,p,S1192,fileA,2\nc1,p,S1192,fileB,1\nc1,p,S134,fileA,1\n",
        );
        let t = load_issues(&p).unwrap();
        let got: Vec<_> = t
            .events
            .iter()
            .map(|e| (e.commit_hash.as_str(), e.rule_id.as_str(), e.count))
            .collect();
        assert_eq!(got, vec![("c1", "S1192", 3), ("c1", "S134", 1)]);
        assert_eq!(t.total_occurrences(), 4);
        assert_eq!(t.raw_occurrences, 4);
    }

    #[test]
    fn empty_issue_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "issues.csv", "commit_hash,project,rule_id,count\n");
        assert!(load_issues(&p).unwrap().events.is_empty());
    }

    #[test]
    fn issues_without_count_column_count_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "issues.tsv",
            "creationCommitHash\tprojectID\trule\tcomponent\nc1\tp\tsquid:S1\ta\nc1\tp\tsquid:S1\tb\n",
        );
        let t = load_issues(&p).unwrap();
        assert_eq!(t.events.len(), 1);
        assert_eq!(t.events[0].count, 2);
    }

    #[test]
    fn missing_issue_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "issues.csv", "commit_hash,project,count\nc1,p,1\n");
        let err = load_issues(&p).unwrap_err().to_string();
        assert!(err.contains("rule_id"), "{err}");
    }

    #[test]
    fn non_numeric_count_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "issues.csv",
            "commit_hash,project,rule_id,count\nc1,p,S1,1\nc2,p,S1,many\n",
        );
        match load_issues(&p).unwrap_err() {
            Error::Row { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn zero_row_gives_zero_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let zeros = vec!["0"; 24].join(",");
        let p = write(&dir, "m.csv", &format!("{}\nc1,p,{zeros}\n", measures_header()));
        let t = load_measures(&p).unwrap();
        assert_eq!(t.snapshots.len(), 1);
        assert_eq!(t.snapshots[0].values, vec![0.0; 24]);
    }

    #[test]
    fn density_above_100_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cells = vec!["0".to_string(); 24];
        cells[10] = "101".into(); // NOCD
        let p = write(&dir, "m.csv", &format!("{}\nc1,p,{}\n", measures_header(), cells.join(",")));
        let err = load_measures(&p).unwrap_err().to_string();
        assert!(err.contains("NOCD"), "{err}");
    }

    #[test]
    fn measure_columns_are_reordered_and_aliased() {
        let dir = tempfile::tempdir().unwrap();
        // Reverse order, SonarQube metric keys instead of abbreviations for two columns.
        let mut names: Vec<String> = METRIC_NAMES.iter().map(|s| s.to_string()).collect();
        names[0] = "classes".into();
        names[23] = "duplicated_lines_density".into();
        names.reverse();
        let values: Vec<String> = (0..24).rev().map(|i| i.to_string()).collect();
        let p = write(
            &dir,
            "m.csv",
            &format!("{},commit\n{},c9\n", names.join(","), values.join(",")),
        );
        let t = load_measures(&p).unwrap();
        let expect: Vec<f64> = (0..24).map(f64::from).collect();
        assert_eq!(t.snapshots[0].values, expect);
    }

    #[test]
    fn too_few_metric_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "m.csv", "commit_hash,NC,NF\nc1,1,2\n");
        assert!(matches!(load_measures(&p), Err(Error::Schema { .. })));
    }

    #[test]
    fn empty_metric_cell_filled_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let mut cells = vec!["1".to_string(); 24];
        cells[3] = String::new();
        let p = write(&dir, "m.csv", &format!("{}\nc1,p,{}\n", measures_header(), cells.join(",")));
        let t = load_measures(&p).unwrap();
        assert_eq!(t.filled_cells, 1);
        assert_eq!(t.snapshots[0].values[3], 0.0);
    }

    #[test]
    fn labels_default_and_or() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "l.csv", "faultInducingCommitHash,fixCommitHash\na,x\nb,y\na,z\n");
        let l = load_labels(&p).unwrap();
        assert_eq!(l.len(), 2);
        assert!(l.iter().all(|l| l.inducing));

        let p = write(&dir, "l2.csv", "commit_hash,inducing\na,false\na,true\nb,0\n");
        let l = load_labels(&p).unwrap();
        assert_eq!(
            l,
            vec![
                FaultLabel { commit_hash: "a".into(), inducing: true },
                FaultLabel { commit_hash: "b".into(), inducing: false },
            ]
        );
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("1000"), Some(1000));
        assert_eq!(parse_timestamp("1970-01-01T00:01:00Z"), Some(60));
        assert_eq!(parse_timestamp("1970-01-02 00:00:00"), Some(86400));
        assert_eq!(parse_timestamp("yesterday"), None);
    }
}
