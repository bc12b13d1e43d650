//! Discrete Fourier transform over real/imaginary tensor pairs.
//!
//! The transform is expressed as matrix products against fixed cosine/sine
//! kernels, so gradients flow through it for free. At the sequence lengths
//! this crate targets (two time steps in the reference data) the O(T^2) form
//! is both exact and fast; an FFT would be an optimization, not a fix.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A complex-valued tensor stored as separate real and imaginary parts of
/// identical shape.
#[derive(Debug, Clone)]
pub struct ComplexPair {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexPair {
    pub fn new(re: Tensor, im: Tensor) -> Result<ComplexPair> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch {
                op: "complex_pair",
                lhs: re.shape().to_vec(),
                rhs: im.shape().to_vec(),
            });
        }
        Ok(ComplexPair { re, im })
    }

    /// A real signal with zero imaginary part.
    pub fn from_real(re: Tensor) -> ComplexPair {
        let im = Tensor::zeros(re.shape());
        ComplexPair { re, im }
    }
}

// cos/sin kernel matrices with entry (t, k) = f(2*pi*t*k/T). Both are
// symmetric because t*k is, so one matrix serves rows and columns alike.
fn kernels(t: usize) -> (Tensor, Tensor) {
    let mut cos = vec![0.0; t * t];
    let mut sin = vec![0.0; t * t];
    for a in 0..t {
        for b in 0..t {
            let angle = 2.0 * std::f64::consts::PI * (a * b) as f64 / t as f64;
            cos[a * t + b] = angle.cos();
            sin[a * t + b] = angle.sin();
        }
    }
    (Tensor::new(&[t, t], cos), Tensor::new(&[t, t], sin))
}

/// Discrete Fourier transform applied along the last axis (each row of a 2-D
/// tensor is one sequence; a 1-D tensor is a single sequence).
///
/// Forward: `X_k = sum_t x_t * exp(-2*pi*i*k*t/T)`. The inverse applies the
/// conjugate kernel and the `1/T` scale, so `dft(dft(x), inverse=true) == x`.
pub fn dft(x: &ComplexPair, inverse: bool) -> ComplexPair {
    let one_dim = x.re.shape().len() == 1;
    let (re, im) = if one_dim {
        (x.re.flatten_row(), x.im.flatten_row())
    } else {
        (x.re.clone(), x.im.clone())
    };
    let t = re.cols();
    assert!(t >= 1, "dft needs at least one sample");
    let (cos, sin) = kernels(t);

    let (mut out_re, mut out_im) = if !inverse {
        // (re + i*im)(cos - i*sin) summed over t.
        let r = re.matmul(&cos).unwrap().add(&im.matmul(&sin).unwrap());
        let i = im.matmul(&cos).unwrap().sub(&re.matmul(&sin).unwrap());
        (r, i)
    } else {
        let scale = 1.0 / t as f64;
        let r = re
            .matmul(&cos)
            .unwrap()
            .sub(&im.matmul(&sin).unwrap())
            .mul_scalar(scale);
        let i = im
            .matmul(&cos)
            .unwrap()
            .add(&re.matmul(&sin).unwrap())
            .mul_scalar(scale);
        (r, i)
    };
    if one_dim {
        out_re = out_re.reshape(&[t]);
        out_im = out_im.reshape(&[t]);
    }
    ComplexPair {
        re: out_re,
        im: out_im,
    }
}
