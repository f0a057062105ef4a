//! Confusion-matrix metrics, categorical accuracy and one-vs-rest AUROC.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!("{} labels vs {} predictions", y_true.len(), y_pred.len())));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::UnknownClass(format!("label {} out of range for {n_classes} classes", t.max(p))));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// One-vs-rest metrics of a single class. A `*_undefined` flag marks a zero
/// denominator, in which case the value is reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub specificity_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_specificity: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> MetricsSummary {
    let total = cm.total();
    let k = cm.n_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.tp(c);
            let fp = cm.col_sum(c) - tp;
            let fn_ = cm.row_sum(c) - tp;
            let tn = total - tp - fp - fn_;
            let (precision, precision_undefined) = ratio(tp, tp + fp);
            let (recall, recall_undefined) = ratio(tp, tp + fn_);
            let (specificity, specificity_undefined) = ratio(tn, fp + tn);
            ClassMetrics {
                class: c,
                support: tp + fn_,
                precision,
                recall,
                specificity,
                precision_undefined,
                recall_undefined,
                specificity_undefined,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / k as f64
        }
    };
    let tp_sum: u64 = (0..k).map(|c| cm.tp(c)).sum();
    // Single-label: summed FP and summed FN both equal the off-diagonal mass.
    let (accuracy, _) = ratio(tp_sum, total);
    MetricsSummary {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_specificity: mean(|m| m.specificity),
        micro_precision: accuracy,
        micro_recall: accuracy,
        accuracy,
        per_class,
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(probs: &Array2<f64>) -> Vec<usize> {
    probs.rows().into_iter().map(|r| argmax(&r.to_vec())).collect()
}

/// Fraction of rows whose argmax (lowest index on ties) equals the true label.
pub fn categorical_accuracy(y_true: &[usize], probs: &Array2<f64>) -> Result<f64> {
    if y_true.len() != probs.nrows() {
        return Err(Error::ShapeMismatch(format!("{} labels vs {} rows", y_true.len(), probs.nrows())));
    }
    if y_true.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions(probs).iter().zip(y_true).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Mann-Whitney AUC with midranks for ties. `None` when either class is absent.
pub fn auc_rank(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares the mean rank.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUC by trapezoidal integration of the ROC curve, thresholds at every distinct score.
pub fn auc_trapezoid(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / n_pos, fp / n_neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocReport {
    pub macro_auroc: f64,
    /// One-vs-rest AUC per class; `None` for classes absent from `y_true`.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Macro-averaged one-vs-rest AUROC over the classes present in `y_true`.
pub fn auroc_macro(y_true: &[usize], probs: &Array2<f64>) -> Result<AurocReport> {
    if y_true.len() != probs.nrows() {
        return Err(Error::ShapeMismatch(format!("{} labels vs {} rows", y_true.len(), probs.nrows())));
    }
    let k = probs.ncols();
    if let Some(&bad) = y_true.iter().find(|&&t| t >= k) {
        return Err(Error::UnknownClass(format!("label {bad} out of range for {k} classes")));
    }
    let mut per_class = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    for c in 0..k {
        let positive: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        let scores = probs.column(c).to_vec();
        let auc = auc_rank(&positive, &scores);
        if auc.is_none() {
            skipped.push(c);
        }
        per_class.push(auc);
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let distinct = (0..k).filter(|c| y_true.contains(c)).count();
    if distinct < 2 || defined.is_empty() {
        return Err(Error::param("y_true", format!("AUROC needs at least 2 distinct classes, found {distinct}")));
    }
    Ok(AurocReport { macro_auroc: defined.iter().sum::<f64>() / defined.len() as f64, per_class, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub class_names: Vec<String>,
    pub n_samples: usize,
    pub confusion: ConfusionMatrix,
    pub summary: MetricsSummary,
    pub categorical_accuracy: f64,
    pub auroc: Option<AurocReport>,
}

/// All metrics for one labelled prediction set. AUROC is `None` when fewer
/// than two classes are present.
pub fn evaluate(class_names: &[&str], y_true: &[usize], probs: &Array2<f64>) -> Result<EvaluationReport> {
    let k = class_names.len();
    if probs.ncols() != k {
        return Err(Error::ShapeMismatch(format!("{} probability columns for {k} classes", probs.ncols())));
    }
    let confusion = confusion(y_true, &predictions(probs), k)?;
    Ok(EvaluationReport {
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
        n_samples: y_true.len(),
        summary: per_class_metrics(&confusion),
        categorical_accuracy: categorical_accuracy(y_true, probs)?,
        auroc: auroc_macro(y_true, probs).ok(),
        confusion,
    })
}
