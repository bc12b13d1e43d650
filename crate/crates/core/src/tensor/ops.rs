//! Forward operations and their gradient rules.

use super::Tensor;
use crate::error::{Error, Result};

/// Elementwise nonlinearity selector, mirroring the library's activation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pointwise {
    Sigmoid,
    Tanh,
    Log,
    Exp,
    LeakyRelu(f64),
    Relu,
}

// Raw matrix kernels. `a` is m-by-k, `b` is k-by-n unless noted.

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..kk * n + n];
            let orow = &mut out[i * n..i * n + n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

// a (m-by-n) times b-transpose where b is k-by-n; result m-by-k.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..i * n + n];
        for j in 0..k {
            let brow = &b[j * n..j * n + n];
            let mut s = 0.0;
            for t in 0..n {
                s += arow[t] * brow[t];
            }
            out[i * k + j] = s;
        }
    }
    out
}

// a-transpose (a is m-by-k) times g (m-by-n); result k-by-n.
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..i * k + k];
        let grow = &g[i * n..i * n + n];
        for kk in 0..k {
            let av = arow[kk];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..kk * n + n];
            for j in 0..n {
                orow[j] += av * grow[j];
            }
        }
    }
    out
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn assert_same_shape(&self, other: &Tensor, op: &'static str) {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: shape {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "add");
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(|_, _, g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "sub");
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| a - b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(|_, _, g| {
                vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
            }),
        )
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "mul");
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| a * b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(|parents, _, g| {
                let a = parents[0].values();
                let b = parents[1].values();
                vec![
                    Some(g.iter().zip(b).map(|(gi, bi)| gi * bi).collect()),
                    Some(g.iter().zip(a).map(|(gi, ai)| gi * ai).collect()),
                ]
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let values = self.values().iter().map(|v| v + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(|_, _, g| vec![Some(g.to_vec())]),
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let values = self.values().iter().map(|v| v * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(g.iter().map(|v| v * c).collect())]),
        )
    }

    /// Add a length-n bias vector to every row of an m-by-n tensor.
    pub fn add_row(&self, bias: &Tensor) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(bias.len(), n, "add_row: bias length {} vs {n} columns", bias.len());
        let bv = bias.values();
        let mut values = self.values().to_vec();
        for i in 0..m {
            for j in 0..n {
                values[i * n + j] += bv[j];
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), bias.clone()],
            Box::new(move |parents, _, g| {
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += g[i * n + j];
                    }
                }
                debug_assert_eq!(parents[1].len(), n);
                vec![Some(g.to_vec()), Some(db)]
            }),
        )
    }

    /// Standard matrix product of an m-by-k and a k-by-n tensor.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape().len() != 2
            || other.shape().len() != 2
            || self.shape()[1] != other.shape()[0]
        {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let values = matmul_raw(self.values(), other.values(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            values,
            vec![self.clone(), other.clone()],
            Box::new(move |parents, _, g| {
                let a = parents[0].values();
                let b = parents[1].values();
                let da = parents[0]
                    .requires_grad()
                    .then(|| matmul_nt(g, b, m, n, k));
                let db = parents[1]
                    .requires_grad()
                    .then(|| matmul_tn(a, g, m, k, n));
                vec![da, db]
            }),
        ))
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let v = self.values();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[j * m + i] = v[i * n + j];
            }
        }
        Tensor::from_op(
            vec![n, m],
            values,
            vec![self.clone()],
            Box::new(move |_, _, g| {
                let mut dg = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        dg[i * n + j] = g[j * m + i];
                    }
                }
                vec![Some(dg)]
            }),
        )
    }

    /// Reinterpret the value buffer under a new shape of equal length.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.len(), "reshape {:?} -> {:?}", self.shape(), shape);
        Tensor::from_op(
            shape.to_vec(),
            self.values().to_vec(),
            vec![self.clone()],
            Box::new(|_, _, g| vec![Some(g.to_vec())]),
        )
    }

    pub fn flatten_row(&self) -> Tensor {
        self.reshape(&[1, self.len()])
    }

    /// Column j of an m-by-n tensor, as m-by-1.
    pub fn col(&self, j: usize) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        assert!(j < n, "col {j} of {n}");
        let v = self.values();
        let values = (0..m).map(|i| v[i * n + j]).collect();
        Tensor::from_op(
            vec![m, 1],
            values,
            vec![self.clone()],
            Box::new(move |_, _, g| {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + j] = g[i];
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.values().iter().sum();
        let n = self.len();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    pub fn sigmoid(&self) -> Tensor {
        let values: Vec<f64> = self.values().iter().map(|&x| stable_sigmoid(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(|_, out, g| {
                vec![Some(
                    g.iter().zip(out).map(|(gi, y)| gi * y * (1.0 - y)).collect(),
                )]
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let values: Vec<f64> = self.values().iter().map(|x| x.tanh()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(|_, out, g| {
                vec![Some(
                    g.iter().zip(out).map(|(gi, y)| gi * (1.0 - y * y)).collect(),
                )]
            }),
        )
    }

    pub fn exp(&self) -> Tensor {
        let values: Vec<f64> = self.values().iter().map(|x| x.exp()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(|_, out, g| vec![Some(g.iter().zip(out).map(|(gi, y)| gi * y).collect())]),
        )
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(&self) -> Result<Tensor> {
        if let Some((index, &value)) = self
            .values()
            .iter()
            .enumerate()
            .find(|(_, &v)| v <= 0.0)
        {
            return Err(Error::LogDomain { value, index });
        }
        let values: Vec<f64> = self.values().iter().map(|x| x.ln()).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(|parents, _, g| {
                let x = parents[0].values();
                vec![Some(g.iter().zip(x).map(|(gi, xi)| gi / xi).collect())]
            }),
        ))
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let values: Vec<f64> = self
            .values()
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |parents, _, g| {
                let x = parents[0].values();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(gi, &xi)| if xi > 0.0 { *gi } else { gi * slope })
                        .collect(),
                )]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        let values: Vec<f64> = self.values().iter().map(|&x| x.max(0.0)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(|parents, _, g| {
                let x = parents[0].values();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// Elementwise power with a fixed exponent; inputs must be positive
    /// unless the exponent is a non-negative integer.
    pub fn pow_scalar(&self, exponent: f64) -> Tensor {
        let values: Vec<f64> = self.values().iter().map(|x| x.powf(exponent)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |parents, _, g| {
                let x = parents[0].values();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(gi, xi)| gi * exponent * xi.powf(exponent - 1.0))
                        .collect(),
                )]
            }),
        )
    }

    /// Dispatch form of the elementwise nonlinearities.
    pub fn pointwise(&self, kind: Pointwise) -> Result<Tensor> {
        Ok(match kind {
            Pointwise::Sigmoid => self.sigmoid(),
            Pointwise::Tanh => self.tanh(),
            Pointwise::Log => self.log()?,
            Pointwise::Exp => self.exp(),
            Pointwise::LeakyRelu(slope) => self.leaky_relu(slope),
            Pointwise::Relu => self.relu(),
        })
    }

    /// Row-wise softmax of an m-by-n tensor, stabilized by subtracting each
    /// row's maximum before exponentiation.
    pub fn softmax_rows(&self) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let x = self.values();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..i * n + n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                values[i * n + j] = e;
                denom += e;
            }
            for j in 0..n {
                values[i * n + j] /= denom;
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |_, out, g| {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let y = &out[i * n..i * n + n];
                    let gr = &g[i * n..i * n + n];
                    let dot: f64 = y.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                    for j in 0..n {
                        dx[i * n + j] = y[j] * (gr[j] - dot);
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Per-row zero-mean/unit-variance normalization followed by an affine
    /// transform with per-feature gain and bias.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Tensor {
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let (m, d) = (self.rows(), self.cols());
        assert_eq!(gain.len(), d, "layer_norm gain width");
        assert_eq!(bias.len(), d, "layer_norm bias width");
        let x = self.values();
        let gv = gain.values();
        let bv = bias.values();
        let mut values = vec![0.0; m * d];
        let mut normalized = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &x[i * d..i * d + d];
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[i] = s;
            for j in 0..d {
                let xn = (row[j] - mean) * s;
                normalized[i * d + j] = xn;
                values[i * d + j] = gv[j] * xn + bv[j];
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |parents, _, g| {
                let gv = parents[1].values();
                let mut dx = vec![0.0; m * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for i in 0..m {
                    let xn = &normalized[i * d..i * d + d];
                    let gr = &g[i * d..i * d + d];
                    let s = inv_std[i];
                    // Gradients of the affine part.
                    let mut sum_dxn = 0.0;
                    let mut sum_dxn_xn = 0.0;
                    for j in 0..d {
                        dgain[j] += gr[j] * xn[j];
                        dbias[j] += gr[j];
                        let dxn = gr[j] * gv[j];
                        sum_dxn += dxn;
                        sum_dxn_xn += dxn * xn[j];
                    }
                    // dL/dx_j = s * (dxn_j - mean(dxn) - xn_j * mean(dxn . xn))
                    let df = d as f64;
                    for j in 0..d {
                        let dxn = gr[j] * gv[j];
                        dx[i * d + j] = s * (dxn - sum_dxn / df - xn[j] * sum_dxn_xn / df);
                    }
                }
                vec![Some(dx), Some(dgain), Some(dbias)]
            }),
        )
    }

    /// Vertically stack 2-D tensors with equal column counts.
    pub fn concat_rows(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let n = parts[0].cols();
        let mut values = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for p in parts {
            assert_eq!(p.cols(), n, "concat_rows column mismatch");
            row_counts.push(p.rows());
            values.extend_from_slice(p.values());
        }
        let m: usize = row_counts.iter().sum();
        Tensor::from_op(
            vec![m, n],
            values,
            parts.to_vec(),
            Box::new(move |parents, _, g| {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(parents.len());
                for &rc in &row_counts {
                    let len = rc * n;
                    grads.push(Some(g[offset..offset + len].to_vec()));
                    offset += len;
                }
                grads
            }),
        )
    }

    /// Horizontally stack 2-D tensors with equal row counts.
    pub fn concat_cols(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let m = parts[0].rows();
        let col_counts: Vec<usize> = parts
            .iter()
            .map(|p| {
                assert_eq!(p.rows(), m, "concat_cols row mismatch");
                p.cols()
            })
            .collect();
        let n: usize = col_counts.iter().sum();
        let mut values = vec![0.0; m * n];
        let mut offset = 0;
        for (p, &pc) in parts.iter().zip(&col_counts) {
            let pv = p.values();
            for i in 0..m {
                values[i * n + offset..i * n + offset + pc]
                    .copy_from_slice(&pv[i * pc..i * pc + pc]);
            }
            offset += pc;
        }
        Tensor::from_op(
            vec![m, n],
            values,
            parts.to_vec(),
            Box::new(move |_, _, g| {
                let mut grads = Vec::with_capacity(col_counts.len());
                let mut offset = 0;
                for &pc in &col_counts {
                    let mut dg = vec![0.0; m * pc];
                    for i in 0..m {
                        dg[i * pc..i * pc + pc]
                            .copy_from_slice(&g[i * n + offset..i * n + offset + pc]);
                    }
                    grads.push(Some(dg));
                    offset += pc;
                }
                grads
            }),
        )
    }

    /// Gather rows of a v-by-e table; gradients scatter-add back by row id.
    pub fn gather_rows(&self, ids: &[usize]) -> Tensor {
        let (v, e) = (self.rows(), self.cols());
        let tv = self.values();
        let mut values = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            assert!(id < v, "gather_rows id {id} out of {v}");
            values.extend_from_slice(&tv[id * e..id * e + e]);
        }
        let ids = ids.to_vec();
        Tensor::from_op(
            vec![ids.len(), e],
            values,
            vec![self.clone()],
            Box::new(move |_, _, g| {
                let mut dt = vec![0.0; v * e];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..e {
                        dt[id * e + j] += g[row * e + j];
                    }
                }
                vec![Some(dt)]
            }),
        )
    }

    /// Scale row i of an m-by-n tensor by `v[i]`.
    pub fn scale_rows(&self, v: &Tensor) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(v.len(), m, "scale_rows length");
        let xv = self.values();
        let sv = v.values();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[i * n + j] = xv[i * n + j] * sv[i];
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), v.clone()],
            Box::new(move |parents, _, g| {
                let xv = parents[0].values();
                let sv = parents[1].values();
                let mut dx = vec![0.0; m * n];
                let mut dv = vec![0.0; m];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[i * n + j] * sv[i];
                        dv[i] += g[i * n + j] * xv[i * n + j];
                    }
                }
                vec![Some(dx), Some(dv)]
            }),
        )
    }

    /// Scale column j of an m-by-n tensor by `v[j]`.
    pub fn scale_cols(&self, v: &Tensor) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(v.len(), n, "scale_cols length");
        let xv = self.values();
        let sv = v.values();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[i * n + j] = xv[i * n + j] * sv[j];
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), v.clone()],
            Box::new(move |parents, _, g| {
                let xv = parents[0].values();
                let sv = parents[1].values();
                let mut dx = vec![0.0; m * n];
                let mut dv = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[i * n + j] * sv[j];
                        dv[j] += g[i * n + j] * xv[i * n + j];
                    }
                }
                vec![Some(dx), Some(dv)]
            }),
        )
    }

    /// 1-D convolution along rows with zero same-padding. The kernel length
    /// must be odd; the bias is a single scalar added to every output.
    pub fn conv1d_same(&self, kernel: &Tensor, bias: &Tensor) -> Tensor {
        let (m, t) = (self.rows(), self.cols());
        let k = kernel.len();
        assert!(k % 2 == 1, "conv1d_same kernel length must be odd, got {k}");
        assert_eq!(bias.len(), 1, "conv1d_same bias must be a scalar");
        let half = k / 2;
        let x = self.values();
        let kv = kernel.values();
        let b = bias.values()[0];
        let mut values = vec![0.0; m * t];
        for i in 0..m {
            let row = &x[i * t..i * t + t];
            for s in 0..t {
                let mut acc = b;
                for j in 0..k {
                    let idx = s as isize + j as isize - half as isize;
                    if idx >= 0 && (idx as usize) < t {
                        acc += kv[j] * row[idx as usize];
                    }
                }
                values[i * t + s] = acc;
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), kernel.clone(), bias.clone()],
            Box::new(move |parents, _, g| {
                let x = parents[0].values();
                let kv = parents[1].values();
                let mut dx = vec![0.0; m * t];
                let mut dk = vec![0.0; k];
                let mut db = 0.0;
                for i in 0..m {
                    for s in 0..t {
                        let gs = g[i * t + s];
                        db += gs;
                        for j in 0..k {
                            let idx = s as isize + j as isize - half as isize;
                            if idx >= 0 && (idx as usize) < t {
                                dk[j] += gs * x[i * t + idx as usize];
                                dx[i * t + idx as usize] += gs * kv[j];
                            }
                        }
                    }
                }
                vec![Some(dx), Some(dk), Some(vec![db])]
            }),
        )
    }
}

/// Gated linear unit: `a ⊙ sigmoid(g)`.
pub fn glu(a: &Tensor, gate: &Tensor) -> Result<Tensor> {
    if a.shape() != gate.shape() {
        return Err(Error::ShapeMismatch {
            op: "glu",
            lhs: a.shape().to_vec(),
            rhs: gate.shape().to_vec(),
        });
    }
    Ok(a.mul(&gate.sigmoid()))
}
