use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use diskfail::featurize::{
    build_feature_stack, cusum, edge_change, reversal_counts, CusumMode, CusumParams, EdgeKernel,
    FeatureConfig, FeatureSet,
};
use diskfail::nn::{Classifier, ModelConfig, Sample};
use diskfail::seed;
use diskfail::Matrix;
use rand::Rng;

fn window(t: usize, f: usize) -> Matrix {
    let mut rng = seed::rng(1);
    Matrix::from_vec(t, f, (0..t * f).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn transforms(c: &mut Criterion) {
    let mut group = c.benchmark_group("transforms");
    for t in [30, 120, 480] {
        let m = window(t, 22);
        group.bench_with_input(BenchmarkId::new("reversal", t), &m, |b, m| {
            b.iter(|| reversal_counts(black_box(m)))
        });
        group.bench_with_input(BenchmarkId::new("cusum-f2", t), &m, |b, m| {
            b.iter(|| cusum(black_box(m), &CusumParams::new(CusumMode::F2)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("edge", t), &m, |b, m| {
            b.iter(|| edge_change(black_box(m), EdgeKernel::Adjacent).unwrap())
        });
    }
    let m = window(30, 22);
    let cfg = FeatureConfig::new(FeatureSet::all());
    group.bench_function("stack-all-30x22", |b| {
        b.iter(|| build_feature_stack(black_box(&m), &cfg).unwrap())
    });
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut group = c.benchmark_group("network");
    for (name, config) in [
        ("desk", ModelConfig::desk(60, 30)),
        ("full", ModelConfig::full(60, 30)),
    ] {
        let net = Classifier::init(config, &mut seed::rng(2)).unwrap();
        let mut rng = seed::rng(3);
        let batch: Vec<Sample> = (0..32)
            .map(|i| Sample {
                input: (0..config.input_len())
                    .map(|_| rng.gen_range(0.0..1.0))
                    .collect(),
                label: i % 2,
            })
            .collect();
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| net.forward(black_box(&batch[0].input)).unwrap())
        });
        group.bench_function(BenchmarkId::new("batch32-gradient", name), |b| {
            b.iter(|| net.loss_and_gradient(black_box(&batch)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, transforms, network);
criterion_main!(benches);
