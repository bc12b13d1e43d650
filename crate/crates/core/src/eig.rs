//! Symmetric eigendecomposition via the cyclic Jacobi method.
//!
//! Deterministic by construction: eigenvalues come out ascending and each
//! eigenvector's sign is fixed so that its largest-magnitude component is
//! positive. No gradients flow through the decomposition; callers treat it
//! as preprocessing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Full decomposition of a symmetric matrix: `a = U diag(eigenvalues) U^T`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending eigenvalues, length n.
    pub eigenvalues: Tensor,
    /// n-by-n matrix whose columns are the orthonormal eigenvectors, in the
    /// same order as the eigenvalues.
    pub eigenvectors: Tensor,
}

impl EigenDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Decompose a symmetric matrix. The input must be symmetric within 1e-10;
/// symmetrize first if it is not.
pub fn sym_eig(a: &Tensor) -> Result<EigenDecomposition> {
    assert_eq!(a.shape().len(), 2, "sym_eig expects a matrix");
    let n = a.rows();
    assert_eq!(n, a.cols(), "sym_eig expects a square matrix");
    let av = a.values();

    let mut deviation = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            deviation = deviation.max((av[i * n + j] - av[j * n + i]).abs());
        }
    }
    if deviation > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric {
            deviation,
            tolerance: SYMMETRY_TOLERANCE,
        });
    }

    let mut m = av.to_vec();
    let mut vecs = vec![0.0; n * n];
    for i in 0..n {
        vecs[i * n + i] = 1.0;
    }

    let scale: f64 = av.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Rotate rows/columns p and q of m.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                // Accumulate the rotation into the eigenvector columns.
                for k in 0..n {
                    let vkp = vecs[k * n + p];
                    let vkq = vecs[k * n + q];
                    vecs[k * n + p] = c * vkp - s * vkq;
                    vecs[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[i * n + i]
            .partial_cmp(&m[j * n + j])
            .expect("eigenvalues are finite")
    });

    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        // Sign rule: the largest-magnitude component (first on ties) is
        // made positive.
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for k in 0..n {
            let a = vecs[k * n + src].abs();
            if a > best_abs {
                best_abs = a;
                best = k;
            }
        }
        let flip = if vecs[best * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            eigenvectors[k * n + dst] = flip * vecs[k * n + src];
        }
    }

    Ok(EigenDecomposition {
        eigenvalues: Tensor::new(&[n], eigenvalues),
        eigenvectors: Tensor::new(&[n, n], eigenvectors),
    })
}
