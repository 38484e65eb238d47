use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::data::fnv1a;

/// Xavier-uniform `rows × cols` weight, entries in `±√(6 / (rows + cols))`.
/// The stream is keyed by `(seed, name)` so parameters are independent of
/// creation order.
pub fn xavier_uniform(rows: usize, cols: usize, seed: u64, name: &str) -> Tensor {
    let bound = xavier_bound(rows, cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_parts(vec![rows, cols], data)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Zero bias row of width `d`.
pub fn zero_bias(d: usize) -> Tensor {
    Tensor::zeros(vec![1, d])
}
