//! Repeated random-split experiments: split by pair, train, select by
//! validation loss, evaluate on the held-out pairs, aggregate.

pub mod split;
pub mod train;

use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use split::{split_dataset, split_pairs, SampleSplit, SplitOptions, SplitPlan, SplitRatios};
pub use train::{predict, select_epoch, train_model, EpochRecord, TrainConfig, TrainRun};

use crate::error::{Error, Result};
use crate::metrics::{
    one_sample_t_test, paired_t_test, roc_auc, ConfusionMatrix, Direction, NormalizedConfusion,
    PredictionRow, TTestResult,
};
use crate::nn::ModelParams;
use crate::parallel::{self, Execution};
use crate::sampling::{Dataset, DatasetConfig, Task};

pub const REPORT_FORMAT: &str = "fformation-report/1";

/// Reference AUC of a classifier that guesses.
pub const CHANCE_AUC: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub split: SplitOptions,
    pub repetitions: usize,
    /// Repetition `i` uses seed `seed_base + i` for its split, initialization
    /// and shuffling.
    pub seed_base: u64,
    /// Repetitions run concurrently when above 1.
    pub jobs: usize,
    /// Fixed gradient chunking, so results do not depend on thread count.
    pub strict_determinism: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            split: SplitOptions::default(),
            repetitions: 20,
            seed_base: 0,
            jobs: 1,
            strict_determinism: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.split.ratios.validate()?;
        if self.repetitions < 2 {
            return Err(Error::Config(format!(
                "repetitions must be at least 2, got {}",
                self.repetitions
            )));
        }
        Ok(())
    }

    pub fn seed(&self, repetition: usize) -> u64 {
        self.seed_base.wrapping_add(repetition as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub index: usize,
    pub seed: u64,
    /// Set when the repetition aborted; all metric fields are then empty.
    pub error: Option<String>,
    pub split_attempt: u32,
    /// Pairs in train, validation and test.
    pub pairs: [usize; 3],
    /// Samples in train, validation and test.
    pub samples: [usize; 3],
    pub class_weights: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub best_val_loss: f64,
    /// Binary task only.
    pub auc: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    pub seconds: f64,
    #[serde(skip)]
    pub predictions: Vec<PredictionRow>,
    #[serde(skip)]
    pub params: Option<ModelParams<f64>>,
}

impl RepetitionResult {
    fn failed(index: usize, seed: u64, error: String, seconds: f64) -> Self {
        Self {
            index,
            seed,
            error: Some(error),
            split_attempt: 0,
            pairs: [0; 3],
            samples: [0; 3],
            class_weights: Vec::new(),
            history: Vec::new(),
            selected_epoch: 0,
            best_val_loss: f64::NAN,
            auc: None,
            confusion: None,
            seconds,
            predictions: Vec::new(),
            params: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub config: DatasetConfig,
    pub n_samples: usize,
    pub n_pairs: usize,
    pub label_counts: Vec<usize>,
    pub skipped: usize,
}

impl DatasetSummary {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            config: dataset.config,
            n_samples: dataset.samples.len(),
            n_pairs: dataset.pairs().len(),
            label_counts: dataset.label_counts.clone(),
            skipped: dataset.skipped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1).
    pub std: f64,
    /// One-sided one-sample test of the AUCs against chance (0.5).
    pub vs_chance: Option<TTestResult>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    /// Raw counts summed over completed repetitions.
    pub accumulated: ConfusionMatrix,
    /// `accumulated`, row-normalized once.
    pub normalized: NormalizedConfusion,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub format: String,
    pub config: ExperimentConfig,
    /// Full configuration of the run that produced this report, as written
    /// by the caller (the CLI stores its resolved run configuration here).
    #[serde(default)]
    pub run_config: Option<serde_json::Value>,
    pub dataset: DatasetSummary,
    pub seeds: Vec<u64>,
    pub repetitions: Vec<RepetitionResult>,
    pub failed: Vec<usize>,
    /// True when any repetition aborted.
    pub partial: bool,
    pub auc: Option<AucSummary>,
    pub confusion: Option<ConfusionSummary>,
    pub total_seconds: f64,
}

const T_TEST_NOTE: &str =
    "one-sample t-test of the per-repetition AUCs against 0.5, alternative: greater";

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn run_one(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    index: usize,
    exec: Execution,
) -> RepetitionResult {
    let seed = cfg.seed(index);
    let start = Instant::now();
    let attempt = || -> Result<RepetitionResult> {
        let (plan, routed) = split_dataset(dataset, &cfg.split, seed)?;
        if routed.test.is_empty() {
            return Err(Error::Data("empty test subset".into()));
        }
        let run = train_model(dataset, &routed, &cfg.train, seed, exec)?;
        let predictions = predict(
            &run.params,
            dataset,
            &routed.test,
            cfg.train.batch_size,
            exec,
        )?;
        let truth: Vec<usize> = predictions.iter().map(|r| r.true_class).collect();
        let preds: Vec<usize> = predictions.iter().map(|r| r.pred_class).collect();
        let mut confusion = ConfusionMatrix::new(dataset.n_classes());
        confusion.update(&preds, &truth)?;
        let auc = match dataset.config.task {
            Task::Binary => {
                let scores: Vec<f64> = predictions.iter().map(|r| r.scores[1]).collect();
                let labels: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
                Some(roc_auc(&scores, &labels)?.auc)
            }
            Task::Joint4 => None,
        };
        Ok(RepetitionResult {
            index,
            seed,
            error: None,
            split_attempt: plan.attempt,
            pairs: [
                plan.train_pairs.len(),
                plan.val_pairs.len(),
                plan.test_pairs.len(),
            ],
            samples: [routed.train.len(), routed.val.len(), routed.test.len()],
            class_weights: run.class_weights,
            history: run.history,
            selected_epoch: run.selected_epoch,
            best_val_loss: run.best_val_loss,
            auc,
            confusion: Some(confusion),
            seconds: 0.0,
            predictions,
            params: Some(run.params),
        })
    };
    let mut out = match attempt() {
        Ok(r) => r,
        Err(e) => {
            warn!("repetition {index} (seed {seed}) failed: {e}");
            RepetitionResult::failed(index, seed, e.to_string(), 0.0)
        }
    };
    out.seconds = start.elapsed().as_secs_f64();
    info!(
        "repetition {index} (seed {seed}) done in {:.1}s: auc {:?}, epoch {}",
        out.seconds, out.auc, out.selected_epoch
    );
    out
}

/// Runs `cfg.repetitions` independent split/train/evaluate cycles and
/// aggregates them. Concurrent repetitions give the same report as
/// sequential ones.
pub fn run_repetitions(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<RepetitionReport> {
    cfg.validate()?;
    let start = Instant::now();
    let concurrent = cfg.jobs > 1 && cfg!(feature = "parallel");
    let inner = if concurrent {
        Execution {
            strict: cfg.strict_determinism,
            ..Execution::sequential()
        }
    } else {
        Execution::parallel(cfg.strict_determinism)
    };
    let outer = if concurrent {
        Execution::parallel(true)
    } else {
        Execution::sequential()
    };
    let repetitions = parallel::with_jobs(cfg.jobs, || {
        parallel::map_range(outer, cfg.repetitions, |i| run_one(dataset, cfg, i, inner))
    });
    let mut report = aggregate(dataset, cfg, repetitions)?;
    report.total_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Builds the report from finished repetitions: confusion counts are summed
/// first and normalized once.
pub fn aggregate(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    repetitions: Vec<RepetitionResult>,
) -> Result<RepetitionReport> {
    let failed: Vec<usize> = repetitions
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.index)
        .collect();
    let ok: Vec<&RepetitionResult> = repetitions.iter().filter(|r| r.error.is_none()).collect();
    let mut confusion = None;
    if !ok.is_empty() {
        let mut acc = ConfusionMatrix::new(dataset.n_classes());
        for r in &ok {
            acc.accumulate(r.confusion.as_ref().expect("completed repetition"))?;
        }
        confusion = Some(ConfusionSummary {
            normalized: acc.normalize(),
            accumulated: acc,
            class_names: dataset
                .config
                .task
                .class_names()
                .iter()
                .map(|s| s.to_string())
                .collect(),
        });
    }
    let aucs: Vec<f64> = ok.iter().filter_map(|r| r.auc).collect();
    let auc = if aucs.is_empty() {
        None
    } else {
        let (mean, std) = mean_std(&aucs);
        let (vs_chance, note) = match one_sample_t_test(&aucs, CHANCE_AUC, Direction::Greater) {
            Ok(t) => (Some(t), T_TEST_NOTE.to_string()),
            Err(e) => (None, format!("{T_TEST_NOTE}: not computed ({e})")),
        };
        Some(AucSummary {
            values: aucs,
            mean,
            std,
            vs_chance,
            note,
        })
    };
    Ok(RepetitionReport {
        format: REPORT_FORMAT.to_string(),
        config: *cfg,
        run_config: None,
        dataset: DatasetSummary::of(dataset),
        seeds: repetitions.iter().map(|r| r.seed).collect(),
        partial: !failed.is_empty(),
        failed,
        repetitions,
        auc,
        confusion,
        total_seconds: 0.0,
    })
}

impl RepetitionReport {
    /// Copy with every wall-clock field zeroed, for comparing the metrics of
    /// two runs.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.total_seconds = 0.0;
        for rep in &mut r.repetitions {
            rep.seconds = 0.0;
        }
        r
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self = serde_json::from_str(&text)?;
        if r.format != REPORT_FORMAT {
            return Err(Error::Data(format!(
                "{}: unknown report format {:?}",
                path.display(),
                r.format
            )));
        }
        Ok(r)
    }
}

/// One-sided paired t-test of `a`'s per-repetition AUCs against `b`'s,
/// matched by repetition index. Both reports must share their seeds.
pub fn compare_auc(
    a: &RepetitionReport,
    b: &RepetitionReport,
    direction: Direction,
) -> Result<TTestResult> {
    if a.seeds != b.seeds {
        return Err(Error::Metric(
            "reports were run with different seeds".into(),
        ));
    }
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (ra, rb) in a.repetitions.iter().zip(&b.repetitions) {
        if let (Some(x), Some(y)) = (ra.auc, rb.auc) {
            xa.push(x);
            xb.push(y);
        }
    }
    paired_t_test(&xa, &xb, direction)
}
