//! Parameter initialization helpers.

use rand::Rng;

use crate::tensor::Tensor;

/// Glorot-uniform initialization for a 2-D weight (or 1-D vector, treated as
/// fan_in = len, fan_out = 1).
pub fn glorot<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let (fan_in, fan_out) = match shape {
        [n] => (*n, 1),
        [rows, cols] => (*rows, *cols),
        other => panic!("glorot init for shape {other:?}"),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::param(shape, values)
}

/// Small zero-mean normal initialization (Box-Muller), used for embedding
/// tables.
pub fn small_normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    Tensor::param(shape, values)
}
