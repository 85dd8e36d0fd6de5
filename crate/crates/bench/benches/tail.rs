use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use intail_bench::{gpd_samples, signal};
use intail_core::calibration::{conformal_quantile, gpd_fit};
use intail_core::ra::channel_usage;
use std::hint::black_box;

fn fit(c: &mut Criterion) {
    let mut g = c.benchmark_group("gpd_fit");
    for n in [100, 1000, 5000] {
        let data = gpd_samples(n, 0.2, 1.0);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| gpd_fit(black_box(&data)).unwrap())
        });
    }
    g.finish();
}

fn conformal(c: &mut Criterion) {
    let r = signal(1000, 4);
    c.bench_function("conformal_quantile/1000", |b| {
        b.iter(|| conformal_quantile(black_box(&r), 0.05).unwrap())
    });
}

fn blocklength(c: &mut Criterion) {
    c.bench_function("channel_usage", |b| {
        b.iter(|| channel_usage(black_box(12.3), 200.0, 1e-6).unwrap())
    });
}

criterion_group!(benches, fit, conformal, blocklength);
criterion_main!(benches);
