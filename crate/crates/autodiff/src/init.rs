//! Parameter initializers: truncated normal (std 0.02) for weights,
//! zeros for biases, ones for layer-norm gains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
use crate::tensor::Tensor;

pub const WEIGHT_STD: f64 = 0.02;

/// Seeded initializer. Draw order is the call order, so a model that
/// registers its tensors deterministically is initialized deterministically.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Normal(0, std) resampled until within two standard deviations.
    pub fn truncated_normal<T: Real>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("std must be positive");
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let v: f64 = normal.sample(&mut self.rng);
            if v.abs() <= 2.0 * std {
                data.push(T::of(v));
            }
        }
        Tensor::new(shape.to_vec(), data)
            .expect("shape/data agree")
            .trainable()
    }

    pub fn weight<T: Real>(&mut self, shape: &[usize]) -> Tensor<T> {
        self.truncated_normal(shape, WEIGHT_STD)
    }

    pub fn uniform<T: Real>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(self.rng.random_range(lo..hi)))
            .collect();
        Tensor::new(shape.to_vec(), data)
            .expect("shape/data agree")
            .trainable()
    }
}

pub fn zeros<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).trainable()
}

pub fn ones<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::full(shape, T::one()).trainable()
}
