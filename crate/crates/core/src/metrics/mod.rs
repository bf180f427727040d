//! Evaluation metrics: ROC-AUC, confusion matrices and t-tests.

mod auc;
mod confusion;
mod predictions;
pub mod special;
mod ttest;

pub use auc::{roc_auc, OperatingPoint, RocResult};
pub use confusion::{ConfusionMatrix, NormalizedConfusion};
pub use predictions::{
    read_predictions, summarize, write_predictions, MetricsSummary, PredictionRow,
};
pub use ttest::{one_sample_t_test, paired_t_test, Direction, TTestResult};
