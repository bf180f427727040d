use serde::{Deserialize, Serialize};

use super::special::student_t_sf;
use crate::error::{Error, Result};

/// Alternative hypothesis of a one-sided test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Mean greater than the reference.
    Greater,
    /// Mean less than the reference.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub statistic: f64,
    pub df: f64,
    /// One-sided p-value in `direction`.
    pub p_value: f64,
    pub direction: Direction,
    pub mean: f64,
    pub std_dev: f64,
    pub n: usize,
}

pub fn one_sample_t_test(values: &[f64], mu0: f64, direction: Direction) -> Result<TTestResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Metric(format!(
            "t-test needs at least 2 values, got {n}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) || !mu0.is_finite() {
        return Err(Error::Metric("t-test input is not finite".into()));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let statistic = if values.iter().any(|&v| v != values[0]) {
        (mean - mu0) / (var.sqrt() / nf.sqrt())
    } else if values[0] == mu0 {
        // Every value sits exactly on the reference: no evidence either way.
        0.0
    } else {
        return Err(Error::Metric("t-test on values with zero variance".into()));
    };
    let std_dev = var.sqrt();
    let df = nf - 1.0;
    let p_value = match direction {
        Direction::Greater => student_t_sf(statistic, df),
        Direction::Less => student_t_sf(-statistic, df),
    };
    Ok(TTestResult {
        statistic,
        df,
        p_value,
        direction,
        mean,
        std_dev,
        n,
    })
}

/// One-sample test of the element-wise differences `a - b` against zero.
pub fn paired_t_test(a: &[f64], b: &[f64], direction: Direction) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "paired t-test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    one_sample_t_test(&diff, 0.0, direction)
}
