use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One corner of the empirical ROC curve: classifying `score >= threshold`
/// as positive gives these rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    /// From `(+inf, 0, 0)` to `(min score, 1, 1)`, one point per distinct score.
    pub points: Vec<OperatingPoint>,
    pub positives: usize,
    pub negatives: usize,
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
///
/// The sweep over distinct scores counts, for every negative, the positives
/// ranked strictly above it (weight 2) and tied with it (weight 1), so the
/// result is an exact integer ratio `count / (2 P N)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Metric(format!("score {i} is NaN")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes; got {positives} positive and {negatives} negative samples"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![OperatingPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let mut count2: u128 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut tp_g, mut fp_g) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp_g += 1;
            } else {
                fp_g += 1;
            }
            i += 1;
        }
        count2 += fp_g as u128 * (2 * tp as u128 + tp_g as u128);
        tp += tp_g;
        fp += fp_g;
        points.push(OperatingPoint {
            threshold: s,
            tpr: tp as f64 / p,
            fpr: fp as f64 / n,
        });
    }
    let auc = count2 as f64 / (2 * positives as u128 * negatives as u128) as f64;
    Ok(RocResult {
        auc,
        points,
        positives,
        negatives,
    })
}
