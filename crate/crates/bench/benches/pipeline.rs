use criterion::{criterion_group, criterion_main, Criterion};
use inse_bench::{excerpt, paired_input};
use inse_core::frontend::{GammatoneConfig, GammatoneFrontend};
use inse_core::model::{batch_tensor, build_model, ModelSpec};

fn spectrogram(c: &mut Criterion) {
    let frontend = GammatoneFrontend::new(GammatoneConfig::default()).unwrap();
    let audio = excerpt();
    c.bench_function("gammatone 7.2 s", |b| {
        b.iter(|| frontend.compute(&audio).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let pair = paired_input();
    let x = batch_tensor::<f32>(&[&pair]).unwrap();
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    let full = build_model(&ModelSpec::standard(), 0).unwrap();
    group.bench_function("full", |b| b.iter(|| full.infer(&x).unwrap()));
    let small = build_model(&ModelSpec::reduced(8), 0).unwrap();
    group.bench_function("width 8", |b| b.iter(|| small.infer(&x).unwrap()));
    group.finish();
}

criterion_group!(benches, spectrogram, forward);
criterion_main!(benches);
