//! Transform-path cost with and without per-plane parallelism.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use dyfus_core::init::Rng;
use dyfus_core::parallel::set_parallel;
use dyfus_core::tensor::Tensor;
use dyfus_spectral::{band_split_fft, fft2, BandMasks};

fn bench_fft2(c: &mut Criterion) {
    let x: Tensor<f32> = Rng::new(3, 0).tensor(vec![64, 64], 1.0);
    c.bench_function("fft2_64x64", |b| b.iter(|| black_box(fft2(&x).unwrap())));
}

fn bench_band_split(c: &mut Criterion) {
    let x: Tensor<f32> = Rng::new(4, 0).tensor(vec![1, 16, 64, 64], 1.0);
    let masks = BandMasks::with_defaults(64, 64).unwrap();
    let mut group = c.benchmark_group("band_split_16x64x64");
    for (mode, on) in [("seq", false), ("par", true)] {
        group.bench_function(mode, |b| {
            set_parallel(on);
            b.iter(|| black_box(band_split_fft(&x, &masks).unwrap()));
        });
    }
    set_parallel(true);
    group.finish();
}

criterion_group!(benches, bench_fft2, bench_band_split);
criterion_main!(benches);
