use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use samsa_core::attention::{AttentionConfig, AttentionKind, TransformerLayer};
use samsa_core::gumbel::GumbelRng;
use samsa_core::nn::{ForwardCtx, ParamStore};
use samsa_core::sampler::SampleMode;
use samsa_core::{Array, Tensor};

fn layer_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("layer_forward");
    group.sample_size(10);
    let variants = [
        ("samsa-hard", AttentionKind::Samsa, SampleMode::Hard),
        ("samsa-soft", AttentionKind::Samsa, SampleMode::Soft),
        ("full", AttentionKind::Full, SampleMode::Hard),
    ];
    for (name, attention, mode) in variants {
        let cfg = AttentionConfig {
            attention,
            mode,
            d_model: 64,
            n_heads: 4,
            k: 128,
            d_ffn: 128,
            ..Default::default()
        };
        let mut store = ParamStore::<f32>::new();
        let layer = TransformerLayer::new(&mut store, 0, "bench", cfg).unwrap();
        let p = store.bind(false);
        let alpha = Tensor::scalar(1.0f32);
        for n in [512, 1024, 2048, 4096] {
            let mut rng = GumbelRng::new(n as u64);
            let x = Tensor::constant(Array::<f32>::from_fn(&[n, 64], |_| rng.normal() as f32));
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| {
                    black_box(
                        layer
                            .forward(&p, &alpha, &x, &mut ForwardCtx::eval(0))
                            .unwrap(),
                    )
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, layer_forward);
criterion_main!(benches);
