//! Macro-averaged classification metrics with one-vs-rest ranking scores.

use crate::error::{invalid, Result};
use crate::model::argmax;

/// Scores of one class against the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 6] = ["accuracy", "precision", "recall", "f1", "auroc", "auprc"];

    /// Values in the order of [`MetricsReport::NAMES`].
    pub fn values(&self) -> [f64; 6] {
        [self.accuracy, self.precision, self.recall, self.f1, self.auroc, self.auprc]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Distinct scores in descending order with the positive/negative counts at each.
fn grouped(scores: &[f64], positive: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last: Option<f64> = None;
    for i in order {
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let g = groups.last_mut().expect("group");
        if positive[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Area under the ROC curve by the trapezoidal rule over every distinct
/// threshold; `None` when either class is absent.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let (mut tp, mut fp, mut area) = (0usize, 0usize, 0.0);
    for (dp, dn) in grouped(scores, positive) {
        let (tp0, fp0) = (tp, fp);
        tp += dp;
        fp += dn;
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Some(area / (p * n) as f64)
}

/// Average precision `Σ (R_i − R_{i−1})·P_i` over distinct thresholds;
/// `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    if p == 0 {
        return None;
    }
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    for (dp, dn) in grouped(scores, positive) {
        tp += dp;
        fp += dn;
        ap += dp as f64 / p as f64 * (tp as f64 / (tp + fp) as f64);
    }
    Some(ap)
}

/// Metrics from class probabilities `probs[i][k]` and true labels.
///
/// Zero denominators give 0 for that class, as do ranking scores of classes
/// with no positives (or no negatives) in `labels`.
pub fn compute_metrics(probs: &[Vec<f64>], labels: &[usize]) -> Result<MetricsReport> {
    if probs.is_empty() {
        return Err(invalid("metrics need at least one prediction"));
    }
    if probs.len() != labels.len() {
        return Err(invalid(format!("{} predictions for {} labels", probs.len(), labels.len())));
    }
    let k = probs[0].len();
    for (i, row) in probs.iter().enumerate() {
        if row.len() != k {
            return Err(invalid(format!("row {i} has {} classes, expected {k}", row.len())));
        }
        let total: f64 = row.iter().sum();
        if !((total - 1.0).abs() <= 1e-4) || row.iter().any(|p| !p.is_finite()) {
            return Err(invalid(format!("probabilities of row {i} sum to {total}, expected 1")));
        }
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(invalid(format!("label {l} outside 0..{k}")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (row, &label) in probs.iter().zip(labels) {
        confusion[label][argmax(row)] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            ClassMetrics {
                precision,
                recall,
                f1,
                auroc: auroc(&scores, &positive).unwrap_or(0.0),
                auprc: average_precision(&scores, &positive).unwrap_or(0.0),
                support: actual,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        accuracy: ratio(correct, labels.len()),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        auroc: mean(|c| c.auroc),
        auprc: mean(|c| c.auprc),
        per_class,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(k: usize, c: usize) -> Vec<f64> {
        (0..k).map(|i| if i == c { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn perfect_predictions() {
        let labels = vec![0, 1, 2, 1];
        let probs: Vec<_> = labels.iter().map(|&l| onehot(3, l)).collect();
        let m = compute_metrics(&probs, &labels).unwrap();
        assert_eq!(m.values(), [1.0; 6]);
    }

    #[test]
    fn one_of_each_outcome() {
        // TP, FP, FN, TN for class 1.
        let probs = vec![vec![0.2, 0.8], vec![0.3, 0.7], vec![0.6, 0.4], vec![0.9, 0.1]];
        let labels = vec![1, 0, 1, 0];
        let m = compute_metrics(&probs, &labels).unwrap();
        let c1 = &m.per_class[1];
        assert_eq!((c1.precision, c1.recall, c1.f1), (0.5, 0.5, 0.5));
        assert_eq!(m.confusion, vec![vec![1, 1], vec![1, 1]]);
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn auroc_hand_example() {
        let a = auroc(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(a, 0.75);
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(auroc(&[0.5], &[true]), None);
    }

    #[test]
    fn average_precision_steps() {
        let ap = average_precision(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap();
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(average_precision(&[0.1], &[false]), None);
    }

    #[test]
    fn rejects_unnormalized_rows() {
        assert!(compute_metrics(&[vec![0.5, 0.6]], &[0]).is_err());
        assert!(compute_metrics(&[vec![0.5, 0.5]], &[2]).is_err());
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[vec![0.5, 0.50005]], &[0]).is_ok());
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = compute_metrics(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1]], &[0, 1]).unwrap();
        assert_eq!(m.per_class[2].f1, 0.0);
        assert_eq!(m.per_class[2].auroc, 0.0);
        assert_eq!(m.per_class[0].auroc, 1.0);
    }
}
