use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unlearn_lab::masks::{agree_prob, focus_vector, mask_and, update_direction, AggSpec, GradientPair};
use unlearn_lab::nn::{grad, init_params, Activation, LabeledBatch, LossKind, ModelSpec};
use unlearn_lab::optim::VarianceEstimate;
use unlearn_lab::params::ParamVector;
use unlearn_lab::stats::normal_cdf;
use unlearn_lab::Matrix;

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> ParamVector {
    ParamVector::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn random_pair(n: usize, seed: u64) -> GradientPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = |rng: &mut ChaCha8Rng| VarianceEstimate {
        sigma2: ParamVector::from_vec((0..n).map(|_| rng.gen_range(0.0..0.5)).collect()),
    };
    GradientPair::new(
        random_vec(n, &mut rng),
        random_vec(n, &mut rng),
        sigma(&mut rng),
        sigma(&mut rng),
    )
    .unwrap()
}

fn bench_masks(c: &mut Criterion) {
    let mut group = c.benchmark_group("masks");
    for &n in &[1_000usize, 100_000] {
        let pair = random_pair(n, 7);
        let agg = AggSpec::linear(0.05, 0.95).unwrap();
        group.bench_with_input(BenchmarkId::new("agree_prob", n), &pair, |b, pair| {
            b.iter(|| black_box(agree_prob(pair, 1e-8)));
        });
        group.bench_with_input(BenchmarkId::new("focus_direction", n), &pair, |b, pair| {
            b.iter(|| {
                let f = focus_vector(pair, 1e-8);
                black_box(update_direction(&f, &agg, &pair.g_u, &pair.g_c).unwrap())
            });
        });
        group.bench_with_input(BenchmarkId::new("mask_and", n), &pair, |b, pair| {
            b.iter(|| black_box(mask_and(&pair.g_u, &pair.g_c).unwrap()));
        });
    }
    group.finish();
}

fn bench_gradients(c: &mut Criterion) {
    let spec = ModelSpec::new(16, vec![32], 4, Activation::Relu).unwrap();
    let theta = init_params(&spec, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..32)
        .map(|_| (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..32).map(|_| rng.gen_range(0..4)).collect();
    let batch = LabeledBatch::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap();
    c.bench_function("grad/cross_entropy_b32", |b| {
        b.iter(|| black_box(grad(&spec, &theta, &batch, LossKind::CrossEntropy, None).unwrap()));
    });
}

fn bench_normal_cdf(c: &mut Criterion) {
    let xs: Vec<f64> = (0..1024).map(|i| -6.0 + i as f64 * (12.0 / 1024.0)).collect();
    c.bench_function("normal_cdf/1024", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for &x in &xs {
                acc += normal_cdf(x);
            }
            black_box(acc)
        });
    });
}

criterion_group!(benches, bench_masks, bench_gradients, bench_normal_cdf);
criterion_main!(benches);
