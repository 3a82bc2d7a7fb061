use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use medmamba::autodiff::{matrix_exp_tensor, rfft_tensor};
use medmamba::sgm::dag_loss_tensor;
use medmamba::ssm::{parallel_scan_tensor, selective_scan_tensor};
use medmamba::Tensor;
use medmamba_bench::random;

fn scan(c: &mut Criterion) {
    let mut group = c.benchmark_group("selective_scan");
    let (lanes, n, din) = (8, 8, 32);
    for t in [128usize, 512, 2048] {
        let u = random(&[lanes, t, din], 1);
        let delta = random(&[lanes, t], 2).map(|v| 0.05 + 0.05 * v.abs());
        let a = Tensor::from_fn([n], |i| -1.0 - i as f32);
        let b = random(&[n, din], 3);
        let cm = random(&[din, n], 4);
        let d = random(&[din], 5);
        group.bench_with_input(BenchmarkId::new("sequential", t), &t, |bench, _| {
            bench.iter(|| selective_scan_tensor(black_box(&u), &delta, &a, &b, &cm, &d).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", t), &t, |bench, _| {
            bench.iter(|| parallel_scan_tensor(black_box(&u), &delta, &a, &b, &cm, &d).unwrap())
        });
    }
    group.finish();
}

fn fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("rfft");
    for t in [127usize, 128, 1024] {
        let x = random(&[t, 8, 32], 6);
        group.bench_with_input(BenchmarkId::from_parameter(t), &t, |bench, _| bench.iter(|| rfft_tensor(black_box(&x)).unwrap()));
    }
    group.finish();
}

fn dag(c: &mut Criterion) {
    let mut group = c.benchmark_group("dag_prior");
    for ch in [8usize, 32] {
        let a = random(&[ch, ch], 7).map(|v| 1.0 / (1.0 + (-v).exp()));
        group.bench_with_input(BenchmarkId::new("matrix_exp", ch), &ch, |bench, _| {
            bench.iter(|| matrix_exp_tensor(black_box(&a)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dag_loss", ch), &ch, |bench, _| {
            bench.iter(|| dag_loss_tensor(black_box(&a)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scan, fft, dag);
criterion_main!(benches);
