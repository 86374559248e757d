//! Criterion comparison of the data-parallel kernels against their
//! sequential fallback. Both paths produce bit-identical results; the bench
//! answers whether spawning is worth it at a given size.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dyfus_core::ops::{avg_pool2d, conv2d_raw, ConvMeta, Padding};
use dyfus_core::parallel::set_parallel;
use dyfus_core::tensor::Tensor;

fn seeded(shape: Vec<usize>) -> Tensor<f32> {
    let mut rng = dyfus_core::init::Rng::new(11, 0);
    rng.tensor(shape, 1.0)
}

fn bench_conv2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for &(ch, hw) in &[(16usize, 32usize), (32, 64)] {
        let x = seeded(vec![1, ch, hw, hw]);
        let w = seeded(vec![ch, ch, 3, 3]);
        let meta = ConvMeta {
            in_channels: ch,
            out_channels: ch,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            groups: 1,
            padding: Padding::Zero,
        };
        for (mode, on) in [("seq", false), ("par", true)] {
            group.bench_with_input(
                BenchmarkId::new(mode, format!("{ch}x{hw}x{hw}")),
                &(&x, &w),
                |b, (x, w)| {
                    set_parallel(on);
                    b.iter(|| black_box(conv2d_raw(x, &meta, w, None).unwrap()));
                },
            );
        }
    }
    set_parallel(true);
    group.finish();
}

fn bench_avg_pool(c: &mut Criterion) {
    let mut group = c.benchmark_group("avg_pool_3x3");
    let x = seeded(vec![1, 32, 64, 64]);
    for (mode, on) in [("seq", false), ("par", true)] {
        group.bench_function(mode, |b| {
            set_parallel(on);
            b.iter(|| black_box(avg_pool2d(&x, 3, 1, Padding::Replicate).unwrap()));
        });
    }
    set_parallel(true);
    group.finish();
}

criterion_group!(benches, bench_conv2d, bench_avg_pool);
criterion_main!(benches);
