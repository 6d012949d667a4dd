use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use faultprone::featurize::FeatureSet;
use faultprone::importance::PermutationUnit;
use faultprone::pipeline::{ModelKind, NetworkWidth, Pipeline, Protocol, RunConfig};

/// Commit-level fault prediction from static-analysis warnings.
#[derive(Parser, Debug)]
#[command(name = "faultprone", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: Options,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Label fault-inducing commits from a commit history.
    Szz,
    /// Join issues, measures and labels into one dataset.
    Ingest,
    /// Build the snapshot and windowed feature files.
    Featurize,
    /// Fit the configured models on the training split.
    Train,
    /// Evaluate models under the configured protocol.
    Evaluate,
    /// Permutation feature importance on the held-out split.
    Importance,
    /// Regenerate tables, figures and the manifest from stored artifacts.
    Report,
    /// Every stage in order.
    Run,
}

#[derive(Args, Debug)]
struct Options {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    issues: Option<PathBuf>,
    #[arg(long, global = true)]
    measures: Option<PathBuf>,
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    #[arg(long, global = true)]
    rule_metadata: Option<PathBuf>,
    /// JSON-lines commit history for `szz`.
    #[arg(long, global = true)]
    history: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// rules or metrics
    #[arg(long, global = true)]
    features: Option<FeatureSet>,
    /// Comma-separated, e.g. random_forest,xgb_like,fcnn
    #[arg(long, global = true, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Training fraction of the hold-out split.
    #[arg(long, global = true)]
    split: Option<f64>,
    /// cv or holdout
    #[arg(long, global = true, value_parser = parse_protocol)]
    protocol: Option<Protocol>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// reference or desk
    #[arg(long, global = true, value_parser = parse_width)]
    network_width: Option<NetworkWidth>,
    /// slice or cell
    #[arg(long, global = true, value_parser = parse_unit)]
    permutation_unit: Option<PermutationUnit>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run on a single thread.
    #[arg(long, global = true)]
    deterministic: bool,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s {
        "cv" => Ok(Protocol::Cv),
        "holdout" => Ok(Protocol::Holdout),
        _ => Err(format!("unknown protocol `{s}` (cv, holdout)")),
    }
}

fn parse_width(s: &str) -> Result<NetworkWidth, String> {
    match s {
        "reference" => Ok(NetworkWidth::Reference),
        "desk" => Ok(NetworkWidth::Desk),
        _ => Err(format!("unknown network width `{s}` (reference, desk)")),
    }
}

fn parse_unit(s: &str) -> Result<PermutationUnit, String> {
    match s {
        "slice" => Ok(PermutationUnit::Slice),
        "cell" => Ok(PermutationUnit::Cell),
        _ => Err(format!("unknown permutation unit `{s}` (slice, cell)")),
    }
}

impl Options {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        macro_rules! set_opt {
            ($($f:ident),*) => { $(if self.$f.is_some() { cfg.$f = self.$f; })* };
        }
        set!(seed, features, models, window, folds, split, protocol, epochs, batch_size, network_width,
             permutation_unit, out);
        set_opt!(issues, measures, labels, rule_metadata, history);
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    let deterministic = cli.opts.deterministic;
    let command = cli.command;
    let cfg = cli.opts.resolve()?;
    let pipeline = Pipeline::new(cfg)?;
    let go = || -> faultprone::Result<()> {
        match command {
            Command::Szz => pipeline.stage("szz", Pipeline::szz),
            Command::Ingest => pipeline.stage("ingest", Pipeline::ingest).map(drop),
            Command::Featurize => pipeline.stage("featurize", Pipeline::featurize),
            Command::Train => pipeline.stage("train", Pipeline::train),
            Command::Evaluate => pipeline.stage("evaluate", Pipeline::evaluate),
            Command::Importance => pipeline.stage("importance", Pipeline::importance),
            Command::Report => pipeline.stage("report", Pipeline::report),
            Command::Run => pipeline.run(),
        }
    };
    if deterministic {
        rayon::ThreadPoolBuilder::new().num_threads(1).build()?.install(go)?;
    } else {
        go()?;
    }
    Ok(())
}

/// The error chain, skipping causes their parent already prints.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
