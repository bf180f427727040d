use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

/// Row-normalized matrix. Rows without any samples stay all-zero and are
/// listed in `empty_rows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedConfusion {
    pub rows: Vec<Vec<f64>>,
    pub empty_rows: Vec<usize>,
}

impl NormalizedConfusion {
    pub fn diagonal(&self) -> Vec<f64> {
        self.rows.iter().enumerate().map(|(i, r)| r[i]).collect()
    }
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Metric("confusion counts must be square".into()));
        }
        Ok(Self {
            n_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.n_classes.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn update(&mut self, preds: &[usize], labels: &[usize]) -> Result<()> {
        if preds.len() != labels.len() {
            return Err(Error::Metric(format!(
                "{} predictions but {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let k = self.n_classes;
        if let Some(bad) = preds.iter().chain(labels).find(|&&c| c >= k) {
            return Err(Error::Metric(format!(
                "class index {bad} out of range for {k} classes"
            )));
        }
        for (&p, &t) in preds.iter().zip(labels) {
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    /// Adds another run's counts.
    pub fn accumulate(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::Metric(format!(
                "cannot add a {0}x{0} matrix to a {1}x{1} one",
                other.n_classes, self.n_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn normalize(&self) -> NormalizedConfusion {
        let mut rows = Vec::with_capacity(self.n_classes);
        let mut empty_rows = Vec::new();
        for (i, r) in self.rows().into_iter().enumerate() {
            let sum: u64 = r.iter().sum();
            if sum == 0 {
                empty_rows.push(i);
                rows.push(vec![0.0; self.n_classes]);
            } else {
                rows.push(r.iter().map(|&c| c as f64 / sum as f64).collect());
            }
        }
        NormalizedConfusion { rows, empty_rows }
    }
}
