//! Detection of conversational group (F-formation) membership and
//! speaker/listener role pairs from pairs of wearable sensor streams.
//!
//! The pipeline is:
//!
//! 1. [`ingestion`] loads tri-axial acceleration (20 Hz), binary proximity
//!    (1 Hz) and interval annotations, and rasterizes everything onto a
//!    common 20 Hz frame grid.
//! 2. [`sampling`] cuts sliding windows with 50% overlap and builds one
//!    multichannel sample per unordered participant pair and window.
//! 3. [`nn`] is a from-scratch three-layer LSTM classifier with a small
//!    feed-forward head, weighted cross-entropy loss, backpropagation through
//!    time and Adam.
//! 4. [`experiment`] runs pair-disjoint 80/10/10 splits, 50-epoch training
//!    with validation-loss model selection, and repeated-split aggregation.
//! 5. [`metrics`] provides ROC-AUC, confusion matrices and t-tests.
//!
//! [`synth`] generates mingling sessions with planted groups and speaking
//! turns in the same file formats the ingestion layer reads.

pub mod config;
pub mod error;
pub mod experiment;
pub mod frame;
pub mod ingestion;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
pub use frame::FrameMatrix;
