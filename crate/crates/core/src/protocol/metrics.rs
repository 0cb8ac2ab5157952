use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Hard label for a positive-class probability: 1 iff `p > threshold`.
///
/// At the default threshold this is the two-class argmax with ties going to
/// class 0.
pub fn predict_label(p: f64, threshold: f64) -> u8 {
    u8::from(p > threshold)
}

/// The five scores for one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 5] = ["accuracy", "auc", "precision", "recall", "f1"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.auc, self.precision, self.recall, self.f1]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            accuracy: v[0],
            auc: v[1],
            precision: v[2],
            recall: v[3],
            f1: v[4],
        }
    }
}

/// Metrics of a single fold; AUC is `None` when the fold has one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Precision was set to 0 because nothing was predicted positive.
    pub zero_predicted_positives: bool,
    /// Recall was set to 0 because no sample is positive.
    pub zero_actual_positives: bool,
}

/// Predictions of one fold, in test-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_indices: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub predicted: Vec<u8>,
    pub labels: Vec<u8>,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_subject: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    MeanStd,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aggregation: Aggregation,
    /// Means for `mean_std`, the single pooled score for `pooled`.
    pub scores: MetricSet,
    /// Population standard deviation across folds (`mean_std` only).
    pub std: Option<MetricSet>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_fold: Vec<FoldMetrics>,
    /// Folds that contributed an AUC to the mean.
    pub auc_folds: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Area under the ROC curve as the fraction of positive/negative pairs in
/// which the positive scores higher, ties counting one half.
///
/// Computed from mid-ranks in `O(n log n)`; the numerator is an exact
/// multiple of 0.5, so the value matches the pairwise count exactly.
pub fn roc_auc(probs: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));

    // Sum over positives of (#negatives below + 0.5 * #negatives tied).
    let mut wins = 0.0f64;
    let mut negatives_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&t| labels[t] == 1).count();
        let neg = group.len() - pos;
        wins += pos as f64 * negatives_below as f64 + 0.5 * (pos * neg) as f64;
        negatives_below += neg;
        i = j;
    }
    Some(wins / (n_pos as f64 * n_neg as f64))
}

pub fn compute_metrics(probs: &[f64], labels: &[u8], threshold: f64) -> Result<FoldMetrics> {
    if probs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    if let Some(y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("label {y} outside {{0, 1}}")));
    }

    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (predict_label(p, threshold), y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let n = probs.len();
    let zero_predicted_positives = tp + fp == 0;
    let zero_actual_positives = tp + fn_ == 0;
    let precision = if zero_predicted_positives {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if zero_actual_positives {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(FoldMetrics {
        n,
        accuracy: (tp + tn) as f64 / n as f64,
        auc: roc_auc(probs, labels),
        precision,
        recall,
        f1,
        zero_predicted_positives,
        zero_actual_positives,
    })
}

fn flags_for(folds: &[FoldMetrics]) -> Vec<String> {
    let mut flags = Vec::new();
    let zp = folds.iter().filter(|f| f.zero_predicted_positives).count();
    if zp > 0 {
        flags.push(format!("{zp} fold(s) with zero predicted positives (precision = 0)"));
    }
    let za = folds.iter().filter(|f| f.zero_actual_positives).count();
    if za > 0 {
        flags.push(format!("{za} fold(s) with zero actual positives (recall = 0)"));
    }
    let missing = folds.iter().filter(|f| f.auc.is_none()).count();
    if missing > 0 {
        flags.push(format!("{missing} single-class fold(s) excluded from AUC"));
    }
    flags
}

// Shifted by the first value so identical inputs give exactly (v, 0).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Element-wise mean and population standard deviation across folds.
/// Folds without an AUC are excluded from the AUC statistics only.
pub fn aggregate_mean_std(per_fold: &[FoldMetrics]) -> Result<MetricReport> {
    if per_fold.is_empty() {
        return Err(Error::invalid("cannot aggregate zero folds"));
    }
    let aucs: Vec<f64> = per_fold.iter().filter_map(|f| f.auc).collect();
    if aucs.is_empty() {
        return Err(Error::invalid("AUC is undefined on every fold"));
    }
    let column = |get: fn(&FoldMetrics) -> f64| -> (f64, f64) {
        mean_std(&per_fold.iter().map(get).collect::<Vec<_>>())
    };
    let stats = [
        column(|f| f.accuracy),
        mean_std(&aucs),
        column(|f| f.precision),
        column(|f| f.recall),
        column(|f| f.f1),
    ];
    Ok(MetricReport {
        aggregation: Aggregation::MeanStd,
        scores: MetricSet::from_values(stats.map(|s| s.0)),
        std: Some(MetricSet::from_values(stats.map(|s| s.1))),
        per_fold: per_fold.to_vec(),
        auc_folds: aucs.len(),
        flags: flags_for(per_fold),
    })
}

/// Scores the concatenation of every fold's predictions once.
pub fn aggregate_pooled(fold_results: &[FoldResult]) -> Result<MetricReport> {
    if fold_results.is_empty() {
        return Err(Error::invalid("cannot pool zero folds"));
    }
    let probs: Vec<f64> = fold_results
        .iter()
        .flat_map(|f| f.probabilities.iter().copied())
        .collect();
    let labels: Vec<u8> = fold_results
        .iter()
        .flat_map(|f| f.labels.iter().copied())
        .collect();
    let m = compute_metrics(&probs, &labels, DEFAULT_THRESHOLD)?;
    let auc = m
        .auc
        .ok_or_else(|| Error::invalid("pooled labels contain a single class"))?;
    Ok(MetricReport {
        aggregation: Aggregation::Pooled,
        scores: MetricSet {
            accuracy: m.accuracy,
            auc,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        },
        std: None,
        per_fold: Vec::new(),
        auc_folds: 1,
        flags: flags_for(&[m]),
    })
}
