//! Ranking and operating-point metrics, and column-selection heatmaps.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("both classes must be present")]
    SingleClass,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
use crate::masking::ColumnMask;

/// Area under the ROC curve as the Mann–Whitney statistic
/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`, computed from midranks in `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::InvalidInput("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Confusion-matrix metrics at a fixed threshold. `npv` is `None` when no
/// sample is predicted negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub balanced_accuracy: f64,
    pub npv: Option<f64>,
}

/// Counts at `score ≥ threshold ⇒ positive`.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    (tp, fp, tn, fn_)
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

pub fn metrics_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<OperatingPoint, MetricError> {
    let (tp, fp, tn, fn_) = confusion(scores, labels, threshold);
    let sensitivity = ratio(tp, tp + fn_).ok_or(MetricError::SingleClass)?;
    let specificity = ratio(tn, tn + fp).ok_or(MetricError::SingleClass)?;
    Ok(OperatingPoint {
        threshold,
        sensitivity,
        specificity,
        balanced_accuracy: 0.5 * (sensitivity + specificity),
        npv: ratio(tn, tn + fn_),
    })
}

/// Picks the threshold on validation data whose sensitivity is closest to
/// `target` without falling below it (the largest such threshold), then
/// reports test metrics at that threshold.
pub fn operating_point_metrics(
    scores: &[f64],
    labels: &[u8],
    target_sensitivity: f64,
    val_scores: &[f64],
    val_labels: &[u8],
) -> Result<OperatingPoint, MetricError> {
    let threshold = choose_threshold(val_scores, val_labels, target_sensitivity)?;
    metrics_at(scores, labels, threshold)
}

pub fn choose_threshold(scores: &[f64], labels: &[u8], target_sensitivity: f64) -> Result<f64, MetricError> {
    let mut pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(&s, _)| s).collect();
    if pos.is_empty() || pos.len() == scores.len() {
        return Err(MetricError::SingleClass);
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    // the k highest positive scores are caught by threshold pos[k-1]
    let k = ((target_sensitivity * pos.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(pos[k.min(pos.len()) - 1])
}

/// Fraction of samples selecting each column. All masks must share `d_c`
/// and popcount.
pub fn mask_heatmap(masks: &[ColumnMask]) -> Result<Vec<f64>, MetricError> {
    let first = masks.first().ok_or_else(|| MetricError::InvalidInput("no masks".into()))?;
    let (d_c, k) = (first.d_c(), first.popcount());
    let mut counts = vec![0usize; d_c];
    for m in masks {
        if m.d_c() != d_c || m.popcount() != k {
            return Err(MetricError::InvalidInput(format!(
                "mask with d_c={} popcount={} among d_c={d_c} popcount={k}",
                m.d_c(),
                m.popcount()
            )));
        }
        for c in m.columns() {
            counts[c] += 1;
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / masks.len() as f64).collect())
}
