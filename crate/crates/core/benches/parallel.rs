//! Data-parallel loops under both execution policies. Build with
//! `--no-default-features` to compile rayon out entirely.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use samsa_core::attention::AttentionConfig;
use samsa_core::model::{Model, ModelConfig};
use samsa_core::tasks::{evaluate, Split, TaskSpec};
use samsa_core::verification::distribution_probe;
use samsa_core::Exec;

const POLICIES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn batch_eval(c: &mut Criterion) {
    let spec = TaskSpec {
        size: 128,
        ..Default::default()
    };
    let samples = spec.generate_split(Split::Val, 32, Exec::Sequential);
    let cfg = ModelConfig {
        n_depth: 2,
        layer: AttentionConfig {
            k: 16,
            ..Default::default()
        },
        input: spec.input_spec(),
        head: spec.head_spec(),
    };
    let model = Model::<f32>::new(cfg, 0).unwrap();
    let mut group = c.benchmark_group("batch_eval");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| black_box(evaluate(&model, &samples, 0, exec).unwrap()))
        });
    }
    group.finish();
}

fn dataset_generation(c: &mut Criterion) {
    let spec = TaskSpec::default();
    let mut group = c.benchmark_group("dataset_generation");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| black_box(spec.generate_split(Split::Train, 512, exec)))
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let z = [0.5, -0.2, 1.3, 0.0, 0.7, -1.1, 0.2, 0.9];
    let mut group = c.benchmark_group("selection_frequencies");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| black_box(distribution_probe(&z, 1, 20_000, 0, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_eval, dataset_generation, monte_carlo);
criterion_main!(benches);
