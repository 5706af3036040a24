use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use segloo_bench::{desk_model, fixture_batch, item_chw};
use segloo_core::attacks::{attack_batch, AttackParams};
use segloo_core::attribution::{iqr, loo_attributions_multi, select_taps, ForwardCounter, TapMode};
use segloo_core::segmentation::SegmentationMethod;

fn forward(c: &mut Criterion) {
    let net = desk_model().unwrap();
    let mut group = c.benchmark_group("forward");
    for n in [1, 32, 128] {
        let batch = fixture_batch(n).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &batch.images, |b, images| {
            b.iter(|| net.forward(black_box(images), &[]).unwrap())
        });
    }
    group.finish();
}

fn segmentation(c: &mut Criterion) {
    let batch = fixture_batch(1).unwrap();
    let image = item_chw(&batch, 0).unwrap();
    let mut group = c.benchmark_group("segment");
    for spec in ["slic:n_segments=32", "slic:n_segments=64", "felzenszwalb:scale=1", "quickshift"] {
        let method = SegmentationMethod::parse(spec).unwrap();
        group.bench_function(spec, |b| b.iter(|| method.segment_chw(black_box(&image)).unwrap()));
    }
    group.finish();
}

fn extraction(c: &mut Criterion) {
    let net = desk_model().unwrap();
    let batch = fixture_batch(1).unwrap();
    let image = item_chw(&batch, 0).unwrap();
    let taps = [select_taps(&net, &TapMode::PredictedClass).unwrap()];
    let counter = ForwardCounter::new();
    let mut group = c.benchmark_group("extract-1d");
    group.sample_size(10);
    for spec in ["per-pixel", "slic:n_segments=32"] {
        let map = SegmentationMethod::parse(spec).unwrap().segment_chw(&image).unwrap();
        group.bench_function(spec, |b| {
            b.iter(|| loo_attributions_multi(&net, &image, 0, &map, &taps, 128, &counter).unwrap())
        });
    }
    group.finish();
}

fn attacks(c: &mut Criterion) {
    let net = desk_model().unwrap();
    let batch = fixture_batch(32).unwrap();
    let mut group = c.benchmark_group("attack-32");
    group.sample_size(10);
    for (name, params) in [("fgsm", AttackParams::fgsm(0.1)), ("pgd", AttackParams::pgd(0.1, 0))] {
        group.bench_function(name, |b| b.iter(|| attack_batch(&net, &batch.images, &batch.labels, &params, 1).unwrap()));
    }
    group.finish();
}

fn quantiles(c: &mut Criterion) {
    let values: Vec<f32> = (0..1024).map(|i| ((i * 7919) % 1024) as f32 / 1024.0).collect();
    c.bench_function("iqr-1024", |b| b.iter(|| iqr(black_box(&values)).unwrap()));
}

criterion_group!(benches, forward, segmentation, extraction, attacks, quantiles);
criterion_main!(benches);
