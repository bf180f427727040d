//! From-scratch sequence classifier: stacked LSTM, ReLU head, weighted
//! cross-entropy, backpropagation through time and Adam.

pub mod adam;
pub mod cell;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod params;
pub mod scalar;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cell::lstm_cell_forward;
pub use checkpoint::{Checkpoint, Precision};
pub use gradcheck::{finite_diff_check, gradient_suite, GradCheckCase, GradCheckReport, SuiteCase};
pub use loss::{class_weights, softmax, weighted_cross_entropy, LossSpec};
pub use network::{backward, forward, Engine};
pub use params::{Architecture, Gate, LstmLayerParams, ModelParams};
pub use scalar::Real;
