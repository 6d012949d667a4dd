use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Fold index per sample.
    pub folds: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    /// (train, test) sample indices for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &fold) in self.folds.iter().enumerate() {
            if fold == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }
}

fn class_indices(labels: &[bool]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        out[usize::from(l)].push(i);
    }
    out
}

/// Stratified k-fold assignment. Positives are dealt round-robin over the
/// folds after a seeded shuffle, and negatives continue the deal where the
/// positives stopped, so fold sizes differ by at most one and so do the
/// per-fold positive counts.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let [mut neg, mut pos] = class_indices(labels);
    for (name, members) in [("positive", &pos), ("negative", &neg)] {
        if members.len() < k {
            return Err(Error::invalid(format!(
                "{} {name} samples cannot fill {k} folds; use k <= {}",
                members.len(),
                members.len()
            )));
        }
    }
    let mut rng = seed::rng(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![0; labels.len()];
    for (slot, &i) in pos.iter().chain(&neg).enumerate() {
        folds[i] = slot % k;
    }
    Ok(FoldAssignment { k, folds, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub fraction: f64,
    pub seed: u64,
}

/// Shuffled, stratified split. The train set holds `floor(N * fraction)`
/// samples: each class first gets `floor(n_c * fraction)`, and leftover
/// slots go to the classes with the largest fractional remainder (the
/// smaller class wins ties).
pub fn train_test_split(labels: &[bool], fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {fraction} not in (0, 1)")));
    }
    const SLACK: f64 = 1e-9;
    let classes = class_indices(labels);
    let total = (labels.len() as f64 * fraction + SLACK).floor() as usize;
    let exact: Vec<f64> = classes.iter().map(|c| c.len() as f64 * fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| (e + SLACK).floor() as usize).collect();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - quota[a] as f64;
        let rb = exact[b] - quota[b] as f64;
        rb.total_cmp(&ra).then(classes[a].len().cmp(&classes[b].len()))
    });
    let mut left = total.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(2 * left.max(1)) {
        if left == 0 {
            break;
        }
        if quota[c] < classes[c].len() {
            quota[c] += 1;
            left -= 1;
        }
    }
    for (c, name) in [(0, "negative"), (1, "positive")] {
        if quota[c] == 0 {
            return Err(Error::invalid(format!(
                "split at {fraction} leaves no {name} sample in the training set"
            )));
        }
    }

    let mut rng = seed::rng(seed);
    let mut train = Vec::with_capacity(total);
    let mut test = Vec::with_capacity(labels.len() - total);
    for (c, members) in classes.into_iter().enumerate() {
        let mut members = members;
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[quota[c]..]);
        members.truncate(quota[c]);
        train.extend(members);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(Split { train, test, fraction, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize, pos: usize) -> Vec<bool> {
        (0..n).map(|i| i < pos).collect()
    }

    #[test]
    fn exact_division() {
        let l = labels(100, 10);
        let f = stratified_folds(&l, 10, 7).unwrap();
        for fold in 0..10 {
            let (_, test) = f.split(fold);
            assert_eq!(test.len(), 10);
            assert_eq!(test.iter().filter(|&&i| l[i]).count(), 1);
        }
    }

    #[test]
    fn remainder_spread() {
        let l = labels(101, 11);
        let f = stratified_folds(&l, 10, 7).unwrap();
        for fold in 0..10 {
            let (_, test) = f.split(fold);
            let p = test.iter().filter(|&&i| l[i]).count();
            assert!(p == 1 || p == 2);
        }
        assert_eq!(f, stratified_folds(&l, 10, 7).unwrap());
    }

    #[test]
    fn too_few_members() {
        assert!(stratified_folds(&labels(100, 5), 10, 0).is_err());
        assert!(stratified_folds(&labels(100, 50), 1, 0).is_err());
    }

    #[test]
    fn split_sizes() {
        let s = train_test_split(&labels(100, 10), 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        let s = train_test_split(&labels(5, 2), 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (4, 1));
        assert_eq!(s, train_test_split(&labels(5, 2), 0.8, 1).unwrap());
        // the lone positive loses the leftover slot to the larger remainder
        assert!(train_test_split(&labels(20, 1), 0.3, 1).is_err());
        assert!(train_test_split(&labels(4, 2), 1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn folds_are_stratified(n in 40usize..400, pos_share in 0.05f64..0.5, k in 2usize..11, seed: u64) {
            let pos = ((n as f64 * pos_share) as usize).max(k);
            prop_assume!(n - pos >= k);
            let l = labels(n, pos);
            let f = stratified_folds(&l, k, seed).unwrap();
            let rate = pos as f64 / n as f64;
            let sizes = f.fold_sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for fold in 0..k {
                let (train, test) = f.split(fold);
                prop_assert_eq!(train.len() + test.len(), n);
                let p = test.iter().filter(|&&i| l[i]).count() as f64;
                prop_assert!((p / test.len() as f64 - rate).abs() <= 1.0 / test.len() as f64);
            }
        }

        #[test]
        fn split_is_a_partition(n in 10usize..300, pos in 2usize..10, frac in 0.5f64..0.95, seed: u64) {
            let l = labels(n, pos);
            let s = train_test_split(&l, frac, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len(), (n as f64 * frac + 1e-9).floor() as usize);
        }
    }
}
