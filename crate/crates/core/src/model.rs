//! The estimator/scorer contract shared by the tree ensembles, the networks
//! and the evaluation code.

use crate::error::Result;
use crate::featurize::Samples;

/// A fitted model mapping each sample to a positive-class score in [0, 1].
pub trait Scorer<D>: Send + Sync {
    fn score(&self, data: &D) -> Result<Vec<f64>>;
}

/// Something that can be fitted on a training set.
pub trait Estimator<D: Samples>: Sync {
    fn id(&self) -> String;
    fn fit(&self, train: &D, seed: u64) -> Result<Box<dyn Scorer<D>>>;
}

/// Always returns the same score. Useful as a baseline.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel(pub f64);

impl<D: Samples> Scorer<D> for ConstantModel {
    fn score(&self, data: &D) -> Result<Vec<f64>> {
        Ok(vec![self.0; data.len()])
    }
}

impl<D: Samples> Estimator<D> for ConstantModel {
    fn id(&self) -> String {
        "constant".into()
    }

    fn fit(&self, _train: &D, _seed: u64) -> Result<Box<dyn Scorer<D>>> {
        Ok(Box::new(*self))
    }
}
