//! Eval forward of ResNet-56 against its 40%-pruned compact form.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use filterprune::model::{ArchSpec, Mode, Model};
use filterprune::prune::{hard_prune, PruneConfig, PruneMode, Rounding};
use filterprune::rng;
use filterprune::Tensor;

fn forward(c: &mut Criterion) {
    let mut full: Model<f32> = Model::from_arch(&ArchSpec::resnet56(), 0).unwrap();
    full.set_mode(Mode::Eval);
    let cfg = PruneConfig {
        rounding: Rounding::KeepFloor,
        ..PruneConfig::new(PruneMode::Hard, 0.4, 1)
    };
    let compact = hard_prune(&full, &cfg).unwrap().0.model;
    let x: Tensor<f32> = rng::normal_tensor(&mut rng::seeded(1), &[16, 3, 32, 32], 1.0);
    let mut g = c.benchmark_group("resnet56_forward_batch16");
    g.sample_size(10);
    g.bench_function("baseline", |b| b.iter(|| full.predict(black_box(&x)).unwrap()));
    g.bench_function("pruned_40", |b| b.iter(|| compact.predict(black_box(&x)).unwrap()));
    g.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
