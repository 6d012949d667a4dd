//! Small generated input tables for demos and tests.
//!
//! Inducing commits carry extra violations of the first `signal_rules`
//! rules and a larger `COM` value; everything else is noise.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::METRIC_NAMES;
use crate::seed;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub projects: usize,
    pub commits_per_project: usize,
    pub rules: usize,
    pub signal_rules: usize,
    pub positive_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            projects: 3,
            commits_per_project: 60,
            rules: 8,
            signal_rules: 2,
            positive_rate: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPaths {
    pub issues: PathBuf,
    pub measures: PathBuf,
    pub labels: PathBuf,
    pub rule_metadata: PathBuf,
}

const TYPES: [&str; 3] = ["CODE_SMELL", "BUG", "VULNERABILITY"];
const SEVERITIES: [&str; 4] = ["MINOR", "MAJOR", "CRITICAL", "INFO"];

/// Writes `issues.csv`, `measures.csv`, `labels.csv` and `rules.csv` into `dir`.
pub fn write_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticPaths> {
    if spec.signal_rules > spec.rules || spec.projects == 0 || spec.commits_per_project == 0 {
        return Err(Error::invalid("synthetic spec needs projects, commits and signal_rules <= rules"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = seed::rng(spec.seed);
    let mut issues = String::from("project,commit_hash,rule_id,count\n");
    let mut measures = format!("project,commit_hash,commit_time,{}\n", METRIC_NAMES.join(","));
    let mut labels = String::from("commit_hash,inducing\n");
    let mut rules = String::from("rule_id,type,severity\n");
    for r in 0..spec.rules {
        let _ = writeln!(rules, "squid:S1{r:03},{},{}", TYPES[r % 3], SEVERITIES[r % 4]);
    }
    for p in 0..spec.projects {
        for c in 0..spec.commits_per_project {
            let hash = format!("p{p}c{c:04}");
            let inducing = rng.gen_bool(spec.positive_rate);
            for r in 0..spec.rules {
                let mut n: u32 = if rng.gen_bool(0.3) { rng.gen_range(1..3) } else { 0 };
                if inducing && r < spec.signal_rules {
                    n += rng.gen_range(1..4);
                }
                if n > 0 {
                    let _ = writeln!(issues, "P{p},{hash},squid:S1{r:03},{n}");
                }
            }
            let _ = write!(measures, "P{p},{hash},{}", 1_600_000_000 + (c as i64) * 3600);
            for name in METRIC_NAMES {
                let mut v: f64 = rng.gen_range(0.0..50.0);
                if name == "COM" && inducing {
                    v += 20.0;
                }
                let _ = write!(measures, ",{v:.3}");
            }
            measures.push('\n');
            let _ = writeln!(labels, "{hash},{inducing}");
        }
    }
    let paths = SyntheticPaths {
        issues: dir.join("issues.csv"),
        measures: dir.join("measures.csv"),
        labels: dir.join("labels.csv"),
        rule_metadata: dir.join("rules.csv"),
    };
    for (p, s) in [
        (&paths.issues, &issues),
        (&paths.measures, &measures),
        (&paths.labels, &labels),
        (&paths.rule_metadata, &rules),
    ] {
        std::fs::write(p, s).map_err(|e| Error::io(p, e))?;
    }
    Ok(paths)
}
