//! Seeded randomness. Every stochastic step in the crate draws from a
//! ChaCha stream derived from an explicit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Element, Tensor};

pub type DetRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for a named purpose under one run seed.
pub fn derived(seed: u64, stream: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_tensor<T: Element>(rng: &mut DetRng, shape: &[usize], std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal) * std))
        .collect();
    Tensor::from_vec(shape, data).expect("shape/data agree")
}

pub fn uniform_tensor<T: Element>(rng: &mut DetRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(lo..hi))).collect();
    Tensor::from_vec(shape, data).expect("shape/data agree")
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut DetRng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
