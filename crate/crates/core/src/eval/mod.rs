//! Confusion-matrix metrics, ROC/AUC and stratified cross-validation.

mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{FoldAssignment, Samples};
use crate::model::{Estimator, Scorer};
use crate::seed;

pub use report::{comparison_csv, comparison_markdown, roc_csv, roc_svg, METRIC_ROWS};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Counts at `threshold`: a score at or above it is a positive prediction.
pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionMatrix> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&s, &l) in scores.iter().zip(labels) {
        if !s.is_finite() {
            return Err(Error::invalid("non-finite score"));
        }
        match (s >= threshold, l) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Accuracy metrics in percent. `degenerate` names every metric whose
/// denominator was zero; those are reported as 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
    pub f_measure: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub fnr: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

impl MetricSet {
    /// Values in report-row order: AUC, Precision, Recall, MCC, f-measure,
    /// TNR, FPR, FNR.
    pub fn values(&self) -> [f64; 8] {
        [
            self.auc,
            self.precision,
            self.recall,
            self.mcc,
            self.f_measure,
            self.tnr,
            self.fpr,
            self.fnr,
        ]
    }

    fn from_values(v: [f64; 8]) -> Self {
        MetricSet {
            auc: v[0],
            precision: v[1],
            recall: v[2],
            mcc: v[3],
            f_measure: v[4],
            tnr: v[5],
            fpr: v[6],
            fnr: v[7],
            degenerate: Vec::new(),
        }
    }
}

/// Confusion-matrix metrics; `auc` (a fraction) is supplied by the caller.
pub fn metrics(cm: &ConfusionMatrix, auc: f64) -> Result<MetricSet> {
    if cm.total() == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: f64, den: f64| {
        if den == 0.0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num / den
        }
    };
    let precision = ratio("precision", tp, fp + tp);
    let recall = ratio("recall", tp, fn_ + tp);
    let f_measure = ratio("f_measure", 2.0 * precision * recall, precision + recall);
    let mcc = ratio(
        "mcc",
        tp * tn - fp * fn_,
        ((fp + tp) * (fn_ + tp) * (fp + tn) * (fn_ + tn)).sqrt(),
    );
    let tnr = ratio("tnr", tn, tn + fp);
    let negatives = tn + fp > 0.0;
    let positives = fn_ + tp > 0.0;
    let mut out = MetricSet {
        auc: 100.0 * auc,
        precision: 100.0 * precision,
        recall: 100.0 * recall,
        mcc: 100.0 * mcc,
        f_measure: 100.0 * f_measure,
        tnr: 100.0 * tnr,
        // complements keep fpr + tnr and fnr + recall at exactly 100
        fpr: if negatives { 100.0 - 100.0 * tnr } else { 0.0 },
        fnr: if positives { 100.0 - 100.0 * recall } else { 0.0 },
        degenerate,
    };
    if !negatives {
        out.degenerate.push("fpr".into());
    }
    if !positives {
        out.degenerate.push("fnr".into());
    }
    Ok(out)
}

/// ROC points from a sweep over distinct score thresholds, high to low.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    /// (FPR, TPR) pairs as fractions, starting at (0, 0) and ending at (1, 1).
    pub points: Vec<(f64, f64)>,
    /// Threshold reached at each point after the first.
    pub thresholds: Vec<f64>,
}

/// ROC curve and trapezoidal AUC. Tied scores move along the diagonal of
/// their block, which counts a tied positive/negative pair as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(Roc, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // trapezoid in count units; normalized once at the end
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(threshold);
    }
    Ok((Roc { points, thresholds }, area / (pos as f64 * neg as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_test: usize,
    pub positives: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
}

/// Scores `data` with a fitted model and computes the full metric set.
pub fn evaluate_scores(scores: &[f64], labels: &[bool], fold: usize) -> Result<FoldResult> {
    let cm = confusion(scores, labels, 0.5)?;
    let (_, auc) = roc_auc(scores, labels)?;
    Ok(FoldResult {
        fold,
        n_test: labels.len(),
        positives: labels.iter().filter(|&&l| l).count(),
        confusion: cm,
        metrics: metrics(&cm, auc)?,
    })
}

pub fn evaluate<D: Samples>(model: &dyn Scorer<D>, data: &D) -> Result<FoldResult> {
    let scores = model.score(data)?;
    evaluate_scores(&scores, data.labels(), 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub feature_set: String,
    /// e.g. "10-fold stratified cross-validation" or "80/20 hold-out".
    pub protocol: String,
    pub seed: u64,
    pub config_digest: String,
    pub folds: Vec<FoldResult>,
    pub mean: MetricSet,
    /// Sample standard deviation over folds (zero for a single fold).
    pub stdev: MetricSet,
}

impl EvalReport {
    pub fn from_folds(
        model: String,
        feature_set: String,
        protocol: String,
        seed: u64,
        config_digest: String,
        folds: Vec<FoldResult>,
    ) -> Self {
        let k = folds.len().max(1) as f64;
        let mut mean = [0.0; 8];
        for f in &folds {
            for (m, v) in mean.iter_mut().zip(f.metrics.values()) {
                *m += v / k;
            }
        }
        let mut var = [0.0; 8];
        if folds.len() > 1 {
            for f in &folds {
                for ((s, v), m) in var.iter_mut().zip(f.metrics.values()).zip(mean) {
                    *s += (v - m) * (v - m) / (k - 1.0);
                }
            }
        }
        EvalReport {
            model,
            feature_set,
            protocol,
            seed,
            config_digest,
            folds,
            mean: MetricSet::from_values(mean),
            stdev: MetricSet::from_values(var.map(f64::sqrt)),
        }
    }
}

/// Trains on k−1 folds and scores the held-out fold, for every fold. Each
/// fold's model seed is derived from `seed` and the fold index.
pub fn cross_validate<D: Samples>(
    estimator: &dyn Estimator<D>,
    data: &D,
    folds: &FoldAssignment,
    seed: u64,
) -> Result<Vec<FoldResult>> {
    if folds.folds.len() != data.len() {
        return Err(Error::invalid(format!(
            "fold assignment covers {} samples, data has {}",
            folds.folds.len(),
            data.len()
        )));
    }
    (0..folds.k)
        .map(|f| {
            let run = || -> Result<FoldResult> {
                let (train, test) = folds.split(f);
                let model = estimator.fit(
                    &data.subset(&train),
                    seed::derive(seed, seed::stream::FOLD_MODEL, f as u64),
                )?;
                let test = data.subset(&test);
                let scores = model.score(&test)?;
                evaluate_scores(&scores, test.labels(), f)
            };
            run().map_err(|e| Error::Fold { fold: f, source: Box::new(e) })
        })
        .collect()
}
