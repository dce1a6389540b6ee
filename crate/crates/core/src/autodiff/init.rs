use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Element, Tensor};

/// Zero-mean normal weights with variance `2 / fan_in`.
pub fn he_normal<T: Element>(shape: &[usize], fan_in: usize, seed: u64) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::lit(dist.sample(&mut rng)))
}

/// Standard-normal tensor, for tests and synthetic inputs.
pub fn standard_normal<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::lit(rand_distr::StandardNormal.sample(&mut rng)))
}

/// Uniform tensor on `[lo, hi)`.
pub fn uniform<T: Element>(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<T> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(lo..hi)))
}
