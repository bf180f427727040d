use serde::{Deserialize, Serialize};

use super::scalar::Real;
use crate::error::{Error, Result};

/// Per-class weights for the weighted cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub weight: Vec<f64>,
}

impl LossSpec {
    pub fn new(weight: Vec<f64>) -> Result<Self> {
        if weight.is_empty() || weight.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Config(format!(
                "class weights must be positive and finite, got {weight:?}"
            )));
        }
        Ok(Self { weight })
    }

    pub fn uniform(n_classes: usize) -> Self {
        Self {
            weight: vec![1.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weight.len()
    }

    pub fn weights_as<T: Real>(&self) -> Vec<T> {
        self.weight.iter().map(|&w| T::lit(w)).collect()
    }
}

/// `weight[class] * (-x[class] + log(sum_j exp(x[j])))`, with the maximum
/// logit subtracted inside the log-sum-exp.
pub fn weighted_cross_entropy<T: Real>(x: &[T], class: usize, weight: &[T]) -> Result<T> {
    if class >= x.len() || weight.len() != x.len() {
        return Err(Error::Shape(format!(
            "class {class} with {} logits and {} weights",
            x.len(),
            weight.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "logits",
            layer: 0,
            frame: 0,
        });
    }
    Ok(weight[class] * (log_sum_exp(x) - x[class]))
}

pub(crate) fn log_sum_exp<T: Real>(x: &[T]) -> T {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = x.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Softmax into `out`, max-shifted.
pub fn softmax_into<T: Real>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        s = s + *o;
    }
    for o in out.iter_mut() {
        *o = *o / s;
    }
}

pub fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    softmax_into(x, &mut out);
    out
}

/// `weight[c] = total / (n_classes * count[c])`: inversely proportional to
/// class frequency, all ones for a balanced set.
pub fn class_weights(label_counts: &[usize]) -> Result<Vec<f64>> {
    if label_counts.len() < 2 {
        return Err(Error::Config(
            "class weights need at least two classes".into(),
        ));
    }
    if let Some(c) = label_counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!(
            "class {c} has no training samples; re-split or change the labeling threshold"
        )));
    }
    let total: usize = label_counts.iter().sum();
    let k = label_counts.len() as f64;
    Ok(label_counts
        .iter()
        .map(|&n| total as f64 / (k * n as f64))
        .collect())
}
