//! Datasets, run configuration, checkpoints, the pruning training loop and
//! the command-line front end.

mod checkpoint;
mod cli;
mod config;
mod data;
mod metrics;
mod train;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Manifest, ParamEntry};
pub use cli::{run_cli, run_cli_with, USAGE};
pub use config::{default_lr_schedule, lr_at, DatasetSpec, Init, TrainConfig};
pub use data::{gen_synthetic, gen_synthetic_split, load_cifar10, read_cifar_batch, ChannelStats, Dataset};
pub use metrics::{metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER};
pub use train::{
    accuracy, equivalence_error, initial_model, load_dataset, train, train_on, Trainer, TrainOutcome,
    EQUIVALENCE_TOL,
};
