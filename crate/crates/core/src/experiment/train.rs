//! Minibatch training with validation-loss model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::SampleSplit;
use crate::error::{Error, Result};
use crate::frame::FrameMatrix;
use crate::metrics::PredictionRow;
use crate::nn::{
    adam_step, class_weights, softmax, AdamConfig, AdamState, Architecture, Engine, ModelParams,
    Precision, Real,
};
use crate::parallel::Execution;
use crate::sampling::Dataset;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub precision: Precision,
    pub hidden: usize,
    pub layers: usize,
    pub head_hidden: usize,
    pub relu_on_logits: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
            precision: Precision::F32,
            hidden: Architecture::HIDDEN,
            layers: Architecture::LAYERS,
            head_hidden: Architecture::HEAD_HIDDEN,
            relu_on_logits: false,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self, n_channels: usize, n_classes: usize) -> Architecture {
        Architecture {
            n_channels,
            hidden: self.hidden,
            layers: self.layers,
            head_hidden: self.head_hidden,
            n_classes,
            relu_on_logits: self.relu_on_logits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        let a = &self.adam;
        if !(a.lr > 0.0)
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || !(a.epsilon > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        self.architecture(1, 2).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean weighted loss over the epoch's minibatch updates, per sample.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub best_val_loss: f64,
    /// Parameters after the selected epoch, widened to f64.
    pub params: ModelParams<f64>,
    pub class_weights: Vec<f64>,
    pub seed: u64,
}

/// 1-based epoch with the lowest validation loss; the earliest wins ties.
pub fn select_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

fn refs<'a>(dataset: &'a Dataset, idx: &[usize]) -> Vec<&'a FrameMatrix> {
    idx.iter().map(|&i| &dataset.samples[i].data).collect()
}

/// Weighted loss per sample over `idx`, evaluated in batches.
fn mean_loss<T: Real>(
    engine: &mut Engine<T>,
    params: &ModelParams<T>,
    dataset: &Dataset,
    idx: &[usize],
    weights: &[T],
    batch: usize,
) -> Result<f64> {
    let task = dataset.config.task;
    let mut total = 0.0;
    for chunk in idx.chunks(batch) {
        let labels: Vec<usize> = chunk
            .iter()
            .map(|&i| dataset.samples[i].label(task))
            .collect();
        total += engine
            .loss_sum(params, &refs(dataset, chunk), &labels, weights)?
            .as_f64();
    }
    Ok(total / idx.len() as f64)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged {
            epoch,
            detail: e.to_string(),
        },
        other => other,
    }
}

fn train_generic<T: Real>(
    dataset: &Dataset,
    split: &SampleSplit,
    cfg: &TrainConfig,
    weights_f64: Vec<f64>,
    seed: u64,
    exec: Execution,
) -> Result<TrainRun> {
    let arch = cfg.architecture(dataset.channels(), dataset.n_classes());
    arch.validate()?;
    let task = dataset.config.task;
    let weights: Vec<T> = weights_f64.iter().map(|&w| T::lit(w)).collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(INIT_STREAM);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);

    let mut params = ModelParams::<T>::init(arch, &mut init_rng);
    let mut adam = AdamState::new(cfg.adam, params.len());
    let mut engine = Engine::<T>::new(exec);
    let mut order = split.train.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams<T>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = batch
                .iter()
                .map(|&i| dataset.samples[i].label(task))
                .collect();
            let (loss, grad) = engine
                .loss_and_gradient(&params, &refs(dataset, batch), &labels, &weights)
                .map_err(|e| diverged(epoch, e))?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("training loss {loss}"),
                });
            }
            loss_total += loss * batch.len() as f64;
            adam_step(&mut params, &grad, &mut adam)?;
            if params.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite parameter after update".into(),
                });
            }
        }
        let val_loss = mean_loss(
            &mut engine,
            &params,
            dataset,
            &split.val,
            &weights,
            cfg.batch_size,
        )
        .map_err(|e| diverged(epoch, e))?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_total / order.len() as f64,
            val_loss,
        });
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, params.clone()));
        }
    }
    let (selected_epoch, best_val_loss, best_params) = best.expect("at least one epoch");
    Ok(TrainRun {
        history,
        selected_epoch,
        best_val_loss,
        params: best_params.cast(),
        class_weights: weights_f64,
        seed,
    })
}

/// Trains a fresh network on `split.train`, selecting the epoch with the
/// lowest validation loss. Class weights come from the training labels only.
pub fn train_model(
    dataset: &Dataset,
    split: &SampleSplit,
    cfg: &TrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<TrainRun> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Data(
            "training and validation subsets must be non-empty".into(),
        ));
    }
    let weights = class_weights(&dataset.label_counts_of(&split.train))?;
    match cfg.precision {
        Precision::F32 => train_generic::<f32>(dataset, split, cfg, weights, seed, exec),
        Precision::F64 => train_generic::<f64>(dataset, split, cfg, weights, seed, exec),
    }
}

/// Softmax scores and arg-max predictions for the samples at `idx`.
pub fn predict<T: Real>(
    params: &ModelParams<T>,
    dataset: &Dataset,
    idx: &[usize],
    batch: usize,
    exec: Execution,
) -> Result<Vec<PredictionRow>> {
    let arch = params.arch();
    if arch.n_channels != dataset.channels() {
        return Err(Error::Shape(format!(
            "model expects {} input channels, dataset has {}",
            arch.n_channels,
            dataset.channels()
        )));
    }
    if arch.n_classes != dataset.n_classes() {
        return Err(Error::Shape(format!(
            "model has {} classes, dataset task has {}",
            arch.n_classes,
            dataset.n_classes()
        )));
    }
    let task = dataset.config.task;
    let mut engine = Engine::<T>::new(exec);
    let mut rows = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch.max(1)) {
        let logits = engine.logits(params, &refs(dataset, chunk))?;
        for (&i, z) in chunk.iter().zip(logits) {
            let p: Vec<f64> = softmax(&z).iter().map(|v| v.as_f64()).collect();
            let mut pred = 0;
            for (c, &v) in p.iter().enumerate() {
                if v > p[pred] {
                    pred = c;
                }
            }
            let s = &dataset.samples[i];
            rows.push(PredictionRow {
                sample_id: format!("{}/{}/{}", s.pair, s.segment, s.window_index),
                true_class: s.label(task),
                pred_class: pred,
                scores: p,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_selection() {
        assert_eq!(select_epoch(&[0.9, 0.4, 0.6]), Some(2));
        assert_eq!(select_epoch(&[0.5, 0.3, 0.3, 0.7]), Some(2));
        assert_eq!(select_epoch(&[]), None);
    }
}
