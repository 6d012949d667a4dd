use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featurize::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// A binary tree stored as a flat node list; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    /// Split features in node order.
    pub fn split_features(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

/// How a candidate split is scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Criterion {
    /// Gini impurity decrease on 0/1 targets.
    Gini,
    /// Squared-error decrease on real targets.
    Variance,
    /// Second-order gain on gradient/hessian sums with L2 penalty `lambda`.
    SecondOrder { lambda: f64 },
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    t: f64,
    h: f64,
    n: usize,
}

impl Sums {
    fn add(&mut self, t: f64, h: f64) {
        self.t += t;
        self.h += h;
        self.n += 1;
    }

    fn minus(self, o: Sums) -> Sums {
        Sums { t: self.t - o.t, h: self.h - o.h, n: self.n - o.n }
    }
}

impl Criterion {
    fn score(self, s: Sums) -> f64 {
        let n = s.n as f64;
        match self {
            // n·(1 − gini) up to a constant factor
            Criterion::Gini => (s.t * s.t + (n - s.t) * (n - s.t)) / n,
            Criterion::Variance => s.t * s.t / n,
            Criterion::SecondOrder { lambda } => s.t * s.t / (s.h + lambda),
        }
    }

    fn lambda(self) -> f64 {
        match self {
            Criterion::SecondOrder { lambda } => lambda,
            _ => 0.0,
        }
    }
}

pub(crate) struct TreeBuilder<'a> {
    pub x: &'a FeatureMatrix,
    /// Per-sample target: the 0/1 label, a residual, or a negative gradient.
    pub target: &'a [f64],
    /// Per-sample leaf denominator weight: 1 or the loss hessian.
    pub hess: &'a [f64],
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_child_weight: f64,
    /// Features examined per split; all of them when `None`.
    pub max_features: Option<usize>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    /// Grows a tree on `idx`, a multiset of sample indices.
    pub fn build(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> DecisionTree {
        let mut nodes = Vec::new();
        let mut idx = idx.to_vec();
        self.grow(&mut idx, 0, &mut nodes, rng);
        DecisionTree { nodes, max_depth: self.max_depth, min_samples_leaf: self.min_samples_leaf }
    }

    fn sums(&self, idx: &[usize]) -> Sums {
        let mut s = Sums::default();
        for &i in idx {
            s.add(self.target[i], self.hess[i]);
        }
        s
    }

    fn leaf_value(&self, s: Sums) -> f64 {
        let den = s.h + self.criterion.lambda();
        if den.abs() < 1e-12 {
            0.0
        } else {
            s.t / den
        }
    }

    fn pure(&self, idx: &[usize]) -> bool {
        let first = self.target[idx[0]];
        idx.iter().all(|&i| (self.target[i] - first).abs() <= 1e-12)
    }

    fn grow(&self, idx: &mut [usize], depth: usize, nodes: &mut Vec<Node>, rng: &mut ChaCha8Rng) -> usize {
        let at = nodes.len();
        let total = self.sums(idx);
        nodes.push(Node::Leaf { value: self.leaf_value(total) });
        if self.max_depth.is_some_and(|d| depth >= d)
            || idx.len() < 2 * self.min_samples_leaf.max(1)
            || self.pure(idx)
        {
            return at;
        }
        let Some(best) = self.best_split(idx, total, rng) else {
            return at;
        };
        let (f, thr) = (best.feature, best.threshold);
        let m = self.x.m;
        let values = &self.x.values;
        // stable partition keeps the recursion independent of sort internals
        let (mut l, mut r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| values[i * m + f] <= thr);
        let left = self.grow(&mut l, depth + 1, nodes, rng);
        let right = self.grow(&mut r, depth + 1, nodes, rng);
        nodes[at] = Node::Split { feature: f, threshold: thr, left, right };
        at
    }

    fn best_split(&self, idx: &[usize], total: Sums, rng: &mut ChaCha8Rng) -> Option<Best> {
        let m = self.x.m;
        let mut order: Vec<usize> = (0..m).collect();
        let quota = match self.max_features {
            Some(k) if k < m => {
                order.shuffle(rng);
                k.max(1)
            }
            _ => m,
        };
        let parent = self.criterion.score(total);
        let mut best: Option<Best> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for (visited, &f) in order.iter().enumerate() {
            // past the quota, keep looking only until some valid split exists
            if visited >= quota && best.is_some() {
                break;
            }
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x.values[i * m + f], i)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut left = Sums::default();
            for k in 0..pairs.len() - 1 {
                let (v, i) = pairs[k];
                left.add(self.target[i], self.hess[i]);
                let next = pairs[k + 1].0;
                if v == next {
                    continue;
                }
                let right = total.minus(left);
                if left.n < self.min_samples_leaf
                    || right.n < self.min_samples_leaf
                    || left.h < self.min_child_weight
                    || right.h < self.min_child_weight
                {
                    continue;
                }
                let gain = self.criterion.score(left) + self.criterion.score(right) - parent;
                if matches!(self.criterion, Criterion::SecondOrder { .. }) && gain <= 0.0 {
                    continue;
                }
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                let better = match &best {
                    None => true,
                    Some(b) => {
                        gain > b.gain
                            || (gain == b.gain
                                && (f < b.feature || (f == b.feature && threshold < b.threshold)))
                    }
                };
                if better {
                    best = Some(Best { gain, feature: f, threshold });
                }
            }
        }
        best
    }
}
