//! Seeded parameter initializers.

use rand::Rng;

use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn fan_in_uniform<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
) -> Result<Tensor<T>> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    shape: impl Into<Vec<usize>>,
    bound: f64,
) -> Result<Tensor<T>> {
    Tensor::from_fn(shape, |_| T::c(rng.random_range(-bound..=bound)))
}
