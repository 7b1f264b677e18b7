//! Seeded parameter initialisers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;

/// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng>(rng: &mut R, shape: impl Into<Vec<usize>>, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, a)
}

pub fn uniform<R: Rng>(rng: &mut R, shape: impl Into<Vec<usize>>, bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

pub fn normal<R: Rng>(rng: &mut R, shape: impl Into<Vec<usize>>, std: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}
