use rand_distr::{Distribution, Normal};

use super::{Rng, Scalar, Tensor};

/// Kaiming-normal weights: samples from `N(0, sqrt(2 / fan_in))`.
///
/// Draws are made in `f64` and rounded, so `f32` and `f64` models built from
/// the same seed start from the same weights.
pub fn kaiming_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    assert!(fan_in > 0, "fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("finite samples")
}

/// Biases start at zero.
pub fn zero_init<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape)
}
