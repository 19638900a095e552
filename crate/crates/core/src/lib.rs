//! Filter pruning for small convolutional networks: hard, soft and
//! asymptotic-soft pruning during training, compact-model extraction and
//! FLOPs / wall-clock speedup analysis.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod model;
pub mod prune;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
