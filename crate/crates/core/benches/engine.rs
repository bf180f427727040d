//! Sequential against rayon execution for the two hot paths: one minibatch
//! gradient of the full model and building a dataset from a session.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fformation::nn::{Architecture, Engine, ModelParams};
use fformation::parallel::Execution;
use fformation::sampling::{
    build_dataset, DatasetConfig, InputCombo, Task, Thresholds, WindowSpec,
};
use fformation::synth::{generate, SynthConfig};
use fformation::FrameMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn modes() -> [(&'static str, Execution); 3] {
    [
        ("sequential", Execution::sequential()),
        ("parallel", Execution::parallel(false)),
        ("parallel-strict", Execution::parallel(true)),
    ]
}

fn gradient(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = ModelParams::<f32>::init(Architecture::standard(7, 2), &mut rng);
    let samples: Vec<FrameMatrix> = (0..64)
        .map(|_| {
            FrameMatrix::new(
                300,
                7,
                (0..300 * 7).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect();
    let refs: Vec<&FrameMatrix> = samples.iter().collect();
    let labels: Vec<usize> = (0..64).map(|i| i % 2).collect();
    let weights = [1.0f32, 1.5];

    let mut group = c.benchmark_group("loss_and_gradient_64x300x7");
    group.sample_size(20);
    for (name, exec) in modes() {
        let mut engine = Engine::new(exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                engine
                    .loss_and_gradient(&params, &refs, &labels, &weights)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn dataset(c: &mut Criterion) {
    let session = generate(&SynthConfig::default()).unwrap().session;
    let sessions = [session];
    let cfg = DatasetConfig {
        window: WindowSpec::new(15.0).unwrap(),
        combo: InputCombo::Fusion,
        task: Task::Joint4,
        thresholds: Thresholds::default(),
    };
    let mut group = c.benchmark_group("build_dataset_fusion_15s");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_dataset(&sessions, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gradient, dataset);
criterion_main!(benches);
