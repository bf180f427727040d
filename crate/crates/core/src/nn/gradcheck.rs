//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::LossSpec;
use super::network::Engine;
use super::params::{Architecture, ModelParams};
use crate::error::Result;
use crate::frame::FrameMatrix;
use crate::parallel::Execution;

/// Below this magnitude both gradients count as zero.
pub const ABS_TOL: f64 = 1e-8;
/// Central-difference step. Smaller steps let f64 round-off (about 1e-11
/// absolute in the loss difference) dominate gradients near 1e-7.
pub const DEFAULT_STEP: f64 = 3e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_group: String,
    pub analytic: f64,
    pub numeric: f64,
    pub n_params: usize,
    /// Worst error per named parameter group.
    pub groups: Vec<(String, f64)>,
}

/// `|a - n| / |n|`; zero when both are below [`ABS_TOL`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.abs() < ABS_TOL && numeric.abs() < ABS_TOL {
        return 0.0;
    }
    (analytic - numeric).abs() / numeric.abs().max(ABS_TOL)
}

/// `(L(θ + h e_i) - L(θ - h e_i)) / 2h` for every parameter `i`.
pub fn numeric_gradient(
    params: &ModelParams<f64>,
    samples: &[&FrameMatrix],
    labels: &[usize],
    loss: &LossSpec,
    h: f64,
) -> Result<Vec<f64>> {
    let weights = loss.weights_as::<f64>();
    let mut engine = Engine::new(Execution::sequential());
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + h;
        let up = engine.loss(&probe, samples, labels, &weights)?;
        probe.values_mut()[i] = orig - h;
        let down = engine.loss(&probe, samples, labels, &weights)?;
        probe.values_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Compares two gradient vectors group by group.
pub fn compare(params: &ModelParams<f64>, analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        worst_group: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        n_params: analytic.len(),
        groups: Vec::new(),
    };
    for (name, range) in params.groups() {
        let mut worst = 0.0f64;
        for i in range {
            let e = relative_error(analytic[i], numeric[i]);
            worst = worst.max(e);
            if e > report.max_rel_error || report.worst_group.is_empty() {
                report.max_rel_error = e;
                report.worst_index = i;
                report.worst_group = name.clone();
                report.analytic = analytic[i];
                report.numeric = numeric[i];
            }
        }
        report.groups.push((name, worst));
    }
    report
}

/// Analytic vs central-difference gradient of the mean weighted loss, in f64.
pub fn finite_diff_check(
    params: &ModelParams<f64>,
    samples: &[&FrameMatrix],
    labels: &[usize],
    loss: &LossSpec,
    h: f64,
) -> Result<GradCheckReport> {
    let mut engine = Engine::new(Execution::sequential());
    let (_, grad) = engine.loss_and_gradient(params, samples, labels, &loss.weights_as::<f64>())?;
    let numeric = numeric_gradient(params, samples, labels, loss, h)?;
    Ok(compare(params, grad.values(), &numeric))
}

/// Random model, inputs, labels and class weights for a check.
pub struct GradCheckCase {
    pub params: ModelParams<f64>,
    pub samples: Vec<FrameMatrix>,
    pub labels: Vec<usize>,
    pub loss: LossSpec,
}

impl GradCheckCase {
    /// Tiny model (hidden 3), `steps`-frame sequences. All parameters, biases
    /// included, are drawn from U(-0.6, 0.6) so no gate sits at a trivial
    /// operating point.
    pub fn random(
        seed: u64,
        n_channels: usize,
        n_classes: usize,
        steps: usize,
        batch: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::tiny(n_channels, n_classes);
        let mut params = ModelParams::<f64>::zeros(arch);
        for v in params.values_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
        let samples = (0..batch)
            .map(|_| {
                let data = (0..steps * n_channels)
                    .map(|_| rng.random_range(-1.0f32..1.0))
                    .collect();
                FrameMatrix::new(steps, n_channels, data).expect("shape")
            })
            .collect();
        let labels = (0..batch).map(|_| rng.random_range(0..n_classes)).collect();
        let weight = (0..n_classes).map(|_| rng.random_range(0.5..2.0)).collect();
        Self {
            params,
            samples,
            labels,
            loss: LossSpec { weight },
        }
    }

    pub fn check(&self, h: f64) -> Result<GradCheckReport> {
        let refs: Vec<&FrameMatrix> = self.samples.iter().collect();
        finite_diff_check(&self.params, &refs, &self.labels, &self.loss, h)
    }
}

/// One entry of [`gradient_suite`].
#[derive(Debug, Clone, Serialize)]
pub struct SuiteCase {
    pub seed: u64,
    pub n_classes: usize,
    pub report: GradCheckReport,
}

/// Channels, sequence length and batch size of the suite's tiny models.
pub const SUITE_CHANNELS: usize = 7;
pub const SUITE_STEPS: usize = 5;
pub const SUITE_BATCH: usize = 3;
/// Largest acceptable relative error in [`gradient_suite`].
pub const SUITE_TOLERANCE: f64 = 1e-4;

/// Checks tiny random models for seeds `0..n_seeds`, each with two and with
/// four classes.
pub fn gradient_suite(n_seeds: u64) -> Result<Vec<SuiteCase>> {
    let mut out = Vec::new();
    for seed in 0..n_seeds {
        for n_classes in [2, 4] {
            let case =
                GradCheckCase::random(seed, SUITE_CHANNELS, n_classes, SUITE_STEPS, SUITE_BATCH);
            out.push(SuiteCase {
                seed,
                n_classes,
                report: case.check(DEFAULT_STEP)?,
            });
        }
    }
    Ok(out)
}
