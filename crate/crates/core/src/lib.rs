//! Commit-level fault prediction from static-analysis rule violations and
//! software metrics.
//!
//! The pipeline labels fault-inducing commits with SZZ ([`szz`]), joins
//! per-commit rule violations and metrics ([`ingest`]), builds snapshot and
//! windowed inputs ([`featurize`]), trains tree ensembles ([`trees`]) and 1-D
//! convolutional networks ([`neural`]), evaluates them ([`eval`]) and ranks
//! every feature by permutation importance ([`importance`]).

pub mod error;
pub mod eval;
pub mod featurize;
pub mod importance;
pub mod ingest;
pub mod model;
pub mod neural;
pub mod pipeline;
pub mod seed;
pub mod synthetic;
pub mod szz;
pub mod trees;

pub use error::{Error, Result};
