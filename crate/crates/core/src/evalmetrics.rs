//! Spearman correlation, positive-class F1 with dev threshold search,
//! partial ROC AUC, and the Jaccard / majority baselines.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::textindex::tokenize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions vs {1} gold values")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations")]
    TooShort,
    #[error("input is constant; correlation undefined")]
    Constant,
    #[error("gold labels contain a single class")]
    SingleClass,
    #[error("fpr cap must lie in (0, 1], got {0}")]
    BadCap(f64),
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: String,
    pub value: f64,
    pub threshold: Option<f64>,
}

/// 1-based ranks with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64, MetricError> {
    if pred.len() != gold.len() {
        return Err(MetricError::LengthMismatch(pred.len(), gold.len()));
    }
    if pred.len() < 2 {
        return Err(MetricError::TooShort);
    }
    pearson(&average_ranks(pred), &average_ranks(gold))
}

/// `2TP / (2TP + FP + FN)`, or 0 when nothing is positive on either side.
pub fn f1_positive(pred: &[bool], gold: &[bool]) -> Result<f64, MetricError> {
    if pred.len() != gold.len() {
        return Err(MetricError::LengthMismatch(pred.len(), gold.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

/// Predicts positive when `score >= threshold`.
pub fn apply_threshold(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

/// Threshold candidates: 0, 1 and every midpoint between adjacent distinct scores.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut unique = scores.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let mut c: Vec<f64> = unique.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    c.push(0.0);
    c.push(1.0);
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// Threshold maximizing F1 on the given data; ties go to the smallest threshold.
///
/// Sweeps candidates in ascending order with a merge over the sorted scores,
/// so the whole sweep is `O(n log n)`.
pub fn threshold_search(scores: &[f64], gold: &[bool]) -> Result<(f64, f64), MetricError> {
    if scores.len() != gold.len() {
        return Err(MetricError::LengthMismatch(scores.len(), gold.len()));
    }
    let total_pos = gold.iter().filter(|&&g| g).count();
    if total_pos == 0 || total_pos == gold.len() {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let candidates = threshold_candidates(scores);

    // Items with score < threshold are predicted negative.
    let mut below = 0usize;
    let mut below_pos = 0usize;
    let mut best = (candidates[0], -1.0);
    for &t in &candidates {
        while below < order.len() && scores[order[below]] < t {
            if gold[order[below]] {
                below_pos += 1;
            }
            below += 1;
        }
        let tp = total_pos - below_pos;
        let predicted = order.len() - below;
        let fp = predicted - tp;
        let fn_ = below_pos;
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

/// Area under the ROC curve for `fpr` in `[0, cap]`, divided by `cap`.
///
/// The curve is traced by a descending-score sweep in which tied scores move
/// together (a diagonal segment). The last segment is cut at `fpr = cap` by
/// linear interpolation.
pub fn auc_at(cap: f64, scores: &[f64], gold: &[bool]) -> Result<f64, MetricError> {
    if !(cap > 0.0 && cap <= 1.0) {
        return Err(MetricError::BadCap(cap));
    }
    if scores.len() != gold.len() {
        return Err(MetricError::LengthMismatch(scores.len(), gold.len()));
    }
    let p = gold.iter().filter(|&&g| g).count();
    let n = gold.len() - p;
    if p == 0 || n == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut x0, mut y0) = (0.0f64, 0.0f64);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if gold[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let x1 = fp as f64 / n as f64;
        let y1 = tp as f64 / p as f64;
        if x1 >= cap {
            let y_cap = if x1 > x0 {
                y0 + (y1 - y0) * (cap - x0) / (x1 - x0)
            } else {
                y1
            };
            area += (cap - x0) * (y0 + y_cap) / 2.0;
            return Ok((area / cap).clamp(0.0, 1.0));
        }
        area += (x1 - x0) * (y0 + y1) / 2.0;
        x0 = x1;
        y0 = y1;
        i = j;
    }
    // the sweep always ends at fpr = 1 >= cap
    unreachable!("ROC sweep ended before reaching the fpr cap")
}

/// Token-set Jaccard overlap; two token-less sentences count as identical.
pub fn jaccard_baseline(a: &str, b: &str) -> f64 {
    let ta: HashSet<String> = tokenize(a).into_iter().collect();
    let tb: HashSet<String> = tokenize(b).into_iter().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Constant predictor returning the most frequent training label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityBaseline {
    pub label: bool,
}

impl MajorityBaseline {
    pub fn predict(&self, n: usize) -> Vec<bool> {
        vec![self.label; n]
    }
}

/// Ties resolve to the positive label.
pub fn majority_baseline(train_labels: &[bool]) -> Result<MajorityBaseline, MetricError> {
    if train_labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let pos = train_labels.iter().filter(|&&l| l).count();
    Ok(MajorityBaseline {
        label: 2 * pos >= train_labels.len(),
    })
}
