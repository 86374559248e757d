//! Simulated band mixing vs the explicit transform split, each with the
//! data-parallel paths on and off.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use dyfus_core::init::Rng;
use dyfus_core::parallel::set_parallel;
use dyfus_core::tensor::Tensor;
use dyfus_ops::dmsd::{dmsd_forward, DmsdParams, HighBandInit};
use dyfus_spectral::{band_split_fft, BandMasks};

fn bench_band_paths(c: &mut Criterion) {
    let channels = 16;
    let params =
        DmsdParams::<f32>::init(channels, &mut Rng::new(1, 0), HighBandInit::Laplacian).unwrap();
    let x: Tensor<f32> = Rng::new(2, 1).tensor(vec![1, channels, 64, 64], 1.0);
    let masks = BandMasks::with_defaults(64, 64).unwrap();

    let mut group = c.benchmark_group("band_paths_1x16x64x64");
    for (mode, on) in [("seq", false), ("par", true)] {
        group.bench_function(format!("simulated/{mode}"), |b| {
            set_parallel(on);
            b.iter(|| black_box(dmsd_forward(&x, &params).unwrap()));
        });
        group.bench_function(format!("fft/{mode}"), |b| {
            set_parallel(on);
            b.iter(|| black_box(band_split_fft(&x, &masks).unwrap()));
        });
    }
    set_parallel(true);
    group.finish();
}

criterion_group!(benches, bench_band_paths);
criterion_main!(benches);
