//! Conv kernels under the rayon core and the sequential fallback.
//!
//! Bench ids do not depend on the build, so the two builds compare directly:
//!
//! ```text
//! cargo bench --bench kernels -- --save-baseline parallel
//! cargo bench --bench kernels --no-default-features -- --baseline parallel
//! ```

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use filterprune::rng;
use filterprune::tensor::{conv2d, conv2d_grad, par};
use filterprune::Tensor;

fn thread_counts() -> Vec<usize> {
    let all = par::current_threads();
    if all > 1 {
        vec![1, all]
    } else {
        vec![1]
    }
}

fn conv(c: &mut Criterion) {
    let mut r = rng::seeded(0);
    let x: Tensor<f32> = rng::normal_tensor(&mut r, &[16, 16, 32, 32], 1.0);
    let w: Tensor<f32> = rng::normal_tensor(&mut r, &[16, 16, 3, 3], 0.1);
    let dy: Tensor<f32> = rng::normal_tensor(&mut r, &[16, 16, 32, 32], 1.0);
    let mut g = c.benchmark_group("conv3x3_16x16x32x32_batch16");
    g.sample_size(20);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::new("forward", t), &t, |b, &t| {
            b.iter(|| par::with_threads(t, || conv2d(black_box(&x), black_box(&w), 1, 1).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("backward", t), &t, |b, &t| {
            b.iter(|| par::with_threads(t, || conv2d_grad(black_box(&x), &w, black_box(&dy), 1, 1).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, conv);
criterion_main!(benches);
