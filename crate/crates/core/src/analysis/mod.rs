//! MAC accounting for baseline and pruned models and wall-clock forward
//! benchmarking.

mod bench;
mod flops;

pub use bench::{bench_forward, compare_speed, BenchOptions, BenchStats, SpeedupReport};
pub use flops::{compare_flops, count_flops, layer_macs, layerwise_reduction, FlopsReport, LayerFlops};
