//! Spectral processing of the learned sensor graph: normalized Laplacian and
//! its eigenbasis, graph Fourier transforms, joint graph/frequency
//! convolution with GLU gating, the order-1 Chebyshev graph convolution cell,
//! and the fully-connected head producing per-sensor feature tokens.

use rand::Rng;

use crate::dft::{dft, ComplexPair};
use crate::eig::{sym_eig, EigenDecomposition};
use crate::error::{Error, Result};
use crate::init::glorot;
use crate::latent::SensorAdjacency;
use crate::tensor::{glu, Tensor};

/// Normalized Laplacian of a (symmetrized) sensor adjacency together with its
/// eigendecomposition. Eigenvalues lie in [0, 2] up to round-off.
#[derive(Debug, Clone)]
pub struct GraphSpectrum {
    pub laplacian: Tensor,
    pub basis: EigenDecomposition,
}

impl GraphSpectrum {
    pub fn n(&self) -> usize {
        self.basis.n()
    }
}

/// Build `L = I - D^{-1/2} A_sym D^{-1/2}` from a learned adjacency and
/// decompose it. The adjacency is symmetrized as `(A + A^T)/2` first; a zero
/// degree contributes `0^{-1/2} := 0`, so isolated nodes yield the identity
/// row. This is preprocessing: no gradients flow through the result.
pub fn normalized_laplacian(adjacency: &SensorAdjacency) -> GraphSpectrum {
    let n = adjacency.n();
    let a = adjacency.weights.values();

    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
        }
    }
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let d: f64 = sym[i * n..i * n + n].iter().sum();
        inv_sqrt_deg[i] = if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    }
    let mut lap = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            // The shared scale factor keeps the matrix bitwise symmetric.
            let scaled = (inv_sqrt_deg[i] * inv_sqrt_deg[j]) * sym[i * n + j];
            lap[i * n + j] = if i == j { 1.0 - scaled } else { -scaled };
        }
    }
    let laplacian = Tensor::new(&[n, n], lap);
    let basis = sym_eig(&laplacian).expect("laplacian is symmetric by construction");
    GraphSpectrum { laplacian, basis }
}

/// Graph Fourier transform: forward multiplies by `U^T`, inverse by `U`.
/// The leading dimension of `x` must equal the basis size.
pub fn gft(x: &Tensor, basis: &EigenDecomposition, inverse: bool) -> Result<Tensor> {
    let n = basis.n();
    if x.shape().is_empty() || x.shape()[0] != n {
        return Err(Error::ShapeMismatch {
            op: "gft",
            lhs: x.shape().to_vec(),
            rhs: basis.eigenvectors.shape().to_vec(),
        });
    }
    if inverse {
        basis.eigenvectors.matmul(x)
    } else {
        basis.eigenvectors.transpose().matmul(x)
    }
}

/// One (value, gate) kernel pair of the frequency-domain 1-D convolution.
#[derive(Debug, Clone)]
pub struct ConvBranch {
    pub value_kernel: Tensor,
    pub value_bias: Tensor,
    pub gate_kernel: Tensor,
    pub gate_bias: Tensor,
}

impl ConvBranch {
    fn init<R: Rng>(kernel_width: usize, rng: &mut R) -> ConvBranch {
        ConvBranch {
            value_kernel: glorot(&[kernel_width], rng),
            value_bias: Tensor::param(&[1], vec![0.0]),
            gate_kernel: glorot(&[kernel_width], rng),
            gate_bias: Tensor::param(&[1], vec![0.0]),
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let value = x.conv1d_same(&self.value_kernel, &self.value_bias);
        let gate = x.conv1d_same(&self.gate_kernel, &self.gate_bias);
        glu(&value, &gate)
    }
}

/// Frequency-domain convolution parameters. The real and imaginary branches
/// are processed by the same operators with their own parameters; `channels`
/// independent kernel pairs per branch are concatenated per node.
#[derive(Debug, Clone)]
pub struct SpectralConvParams {
    pub channels: usize,
    pub kernel_width: usize,
    pub real: Vec<ConvBranch>,
    pub imag: Vec<ConvBranch>,
}

impl SpectralConvParams {
    pub fn init<R: Rng>(channels: usize, kernel_width: usize, rng: &mut R) -> SpectralConvParams {
        assert!(channels >= 1);
        assert!(kernel_width % 2 == 1, "kernel width must be odd");
        SpectralConvParams {
            channels,
            kernel_width,
            real: (0..channels).map(|_| ConvBranch::init(kernel_width, rng)).collect(),
            imag: (0..channels).map(|_| ConvBranch::init(kernel_width, rng)).collect(),
        }
    }

    /// Per-node output width for a t-step input.
    pub fn output_width(&self, t: usize) -> usize {
        self.channels * t
    }
}

/// Joint spectral convolution of an n-by-t series: GFT along nodes, DFT along
/// time, per-branch gated 1-D convolution over frequency bins, inverse DFT
/// (real part), inverse GFT. Channel outputs are concatenated per node into
/// an n-by-(channels*t) feature block.
pub fn spectral_conv(
    x: &Tensor,
    spectrum: &GraphSpectrum,
    params: &SpectralConvParams,
) -> Result<Tensor> {
    let t = x.cols();
    assert!(t >= 1, "spectral_conv needs at least one time step");
    let node_spectrum = gft(x, &spectrum.basis, false)?;
    let freq = dft(&ComplexPair::from_real(node_spectrum), false);

    let mut blocks = Vec::with_capacity(params.channels);
    for (real_branch, imag_branch) in params.real.iter().zip(&params.imag) {
        let gated_re = real_branch.apply(&freq.re)?;
        let gated_im = imag_branch.apply(&freq.im)?;
        let time = dft(&ComplexPair::new(gated_re, gated_im)?, true);
        // Only the real part feeds the node-domain features. The imaginary
        // residue is not asserted away: trained bias terms on the imaginary
        // branch make it nonzero even for real inputs.
        blocks.push(gft(&time.re, &spectrum.basis, true)?);
    }
    Ok(if blocks.len() == 1 {
        blocks.pop().unwrap()
    } else {
        Tensor::concat_cols(&blocks)
    })
}

/// Order-1 Chebyshev graph convolution parameters.
#[derive(Debug, Clone)]
pub struct ChebGcnParams {
    pub theta: Tensor,
}

impl ChebGcnParams {
    pub fn init<R: Rng>(input_dim: usize, output_dim: usize, rng: &mut R) -> ChebGcnParams {
        ChebGcnParams {
            theta: glorot(&[input_dim, output_dim], rng),
        }
    }
}

/// `Y = sigmoid(D~^{-1/2} A~ D~^{-1/2} X theta)` with `A~ = A_sym + I` and
/// `D~` its degree matrix. Differentiable in both `x` and the adjacency.
pub fn cheb_gcn_cell(
    x: &Tensor,
    adjacency: &SensorAdjacency,
    params: &ChebGcnParams,
) -> Result<Tensor> {
    let n = adjacency.n();
    let a = &adjacency.weights;
    let sym = a.add(&a.transpose()).mul_scalar(0.5);
    let with_loops = sym.add(&Tensor::eye(n));
    let ones = Tensor::full(&[n, 1], 1.0);
    let degrees = with_loops.matmul(&ones)?.reshape(&[n]);
    let inv_sqrt = degrees.pow_scalar(-0.5);
    let normalized = with_loops.scale_rows(&inv_sqrt).scale_cols(&inv_sqrt);
    Ok(normalized.matmul(x)?.matmul(&params.theta)?.sigmoid())
}

/// Parameters of the head mapping spectral features to per-sensor tokens:
/// layer normalization, LeakyReLU, dropout and two stacked linear layers, in
/// that order.
#[derive(Debug, Clone)]
pub struct FcHeadParams {
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub eps: f64,
}

impl FcHeadParams {
    pub fn init<R: Rng>(
        input_dim: usize,
        feature_dim: usize,
        dropout: f64,
        leaky_slope: f64,
        rng: &mut R,
    ) -> FcHeadParams {
        FcHeadParams {
            ln_gain: Tensor::param(&[input_dim], vec![1.0; input_dim]),
            ln_bias: Tensor::param(&[input_dim], vec![0.0; input_dim]),
            w1: glorot(&[input_dim, feature_dim], rng),
            b1: Tensor::param(&[feature_dim], vec![0.0; feature_dim]),
            w2: glorot(&[feature_dim, feature_dim], rng),
            b2: Tensor::param(&[feature_dim], vec![0.0; feature_dim]),
            dropout,
            leaky_slope,
            eps: 1e-5,
        }
    }
}

/// Apply the head. Dropout (inverted scaling) draws its mask from `rng` and
/// is active only when `training`; in eval mode the head is deterministic.
pub fn fc_head<R: Rng>(
    h: &Tensor,
    params: &FcHeadParams,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let normed = h.layer_norm(&params.ln_gain, &params.ln_bias, params.eps);
    let activated = normed.leaky_relu(params.leaky_slope);
    let dropped = if training && params.dropout > 0.0 {
        let keep = 1.0 - params.dropout;
        let mask: Vec<f64> = (0..activated.len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        activated.mul(&Tensor::new(activated.shape(), mask))
    } else {
        activated
    };
    let hidden = dropped.matmul(&params.w1)?.add_row(&params.b1);
    Ok(hidden.matmul(&params.w2)?.add_row(&params.b2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adjacency_from(values: Vec<f64>, n: usize) -> SensorAdjacency {
        SensorAdjacency::new(Tensor::new(&[n, n], values))
    }

    #[test]
    fn zero_adjacency_gives_identity_laplacian() {
        let spectrum = normalized_laplacian(&adjacency_from(vec![0.0; 4], 2));
        assert_eq!(spectrum.laplacian.values(), Tensor::eye(2).values());
        for v in spectrum.basis.eigenvalues.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_graph_hand_computation() {
        let spectrum = normalized_laplacian(&adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2));
        let expect = [1.0, -1.0, -1.0, 1.0];
        for (got, want) in spectrum.laplacian.values().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
        let eig = spectrum.basis.eigenvalues.values();
        assert!(eig[0].abs() < 1e-12 && (eig[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_stay_in_spectral_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n in [2usize, 5, 9] {
            // Random symmetric row-substochastic adjacency.
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = rng.gen_range(0.0..1.0 / n as f64);
                    a[i * n + j] = v;
                    a[j * n + i] = v;
                }
            }
            let spectrum = normalized_laplacian(&adjacency_from(a, n));
            for v in spectrum.basis.eigenvalues.values() {
                assert!(
                    (-1e-8..=2.0 + 1e-8).contains(v),
                    "eigenvalue {v} out of band for n={n}"
                );
            }
        }
    }

    #[test]
    fn gft_identity_basis_is_identity_map() {
        let spectrum = normalized_laplacian(&adjacency_from(vec![0.0; 9], 3));
        let x = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = gft(&x, &spectrum.basis, false).unwrap();
        for (a, b) in x.values().iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gft_round_trip_and_k2_mode() {
        let spectrum = normalized_laplacian(&adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2));
        let x = Tensor::new(&[2, 1], vec![1.0, 1.0]);
        let hat = gft(&x, &spectrum.basis, false).unwrap();
        // The constant signal lands entirely in the zero-frequency mode.
        assert!((hat.values()[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!(hat.values()[1].abs() < 1e-12);
        let back = gft(&hat, &spectrum.basis, true).unwrap();
        for (a, b) in x.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-10);
        }

        let bad = Tensor::new(&[3, 1], vec![0.0; 3]);
        assert!(gft(&bad, &spectrum.basis, false).is_err());
    }

    #[test]
    fn cheb_cell_edgeless_reduction_and_zero_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let adjacency = adjacency_from(vec![0.0; 9], 3);
        let x = Tensor::new(&[3, 2], vec![0.3, -0.5, 0.9, 0.1, -0.2, 0.4]);
        let params = ChebGcnParams::init(2, 2, &mut rng);
        let y = cheb_gcn_cell(&x, &adjacency, &params).unwrap();
        let direct = x.matmul(&params.theta).unwrap().sigmoid();
        for (a, b) in y.values().iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        let zero_theta = ChebGcnParams {
            theta: Tensor::param(&[2, 2], vec![0.0; 4]),
        };
        let y = cheb_gcn_cell(&x, &adjacency, &zero_theta).unwrap();
        for v in y.values() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn cheb_cell_matches_dense_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n = 3;
        let raw: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let adjacency = adjacency_from(raw.clone(), n);
        let x_vals: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(&[n, 2], x_vals.clone());
        let params = ChebGcnParams::init(2, 2, &mut rng);
        let y = cheb_gcn_cell(&x, &adjacency, &params).unwrap();

        // Dense right-hand side computed with plain loops.
        let mut sym = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sym[i * n + j] = 0.5 * (raw[i * n + j] + raw[j * n + i]);
            }
        }
        for i in 0..n {
            sym[i * n + i] += 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| sym[i * n..i * n + n].iter().sum()).collect();
        let theta = params.theta.values();
        for i in 0..n {
            for o in 0..2 {
                let mut acc = 0.0;
                for j in 0..n {
                    let norm = sym[i * n + j] / (deg[i].sqrt() * deg[j].sqrt());
                    for f in 0..2 {
                        acc += norm * x_vals[j * 2 + f] * theta[f * 2 + o];
                    }
                }
                let want = 1.0 / (1.0 + (-acc).exp());
                let got = y.values()[i * 2 + o];
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn spectral_conv_zero_input_zero_bias_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let spectrum = normalized_laplacian(&adjacency_from(vec![0.25; 16], 4));
        let params = SpectralConvParams::init(2, 3, &mut rng);
        let x = Tensor::zeros(&[4, 2]);
        let y = spectral_conv(&x, &spectrum, &params).unwrap();
        assert_eq!(y.shape(), &[4, 4]);
        for v in y.values() {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn single_node_reduces_to_dft_glu_idft() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let spectrum = normalized_laplacian(&adjacency_from(vec![1.0], 1));
        let params = SpectralConvParams::init(1, 3, &mut rng);
        let x = Tensor::new(&[1, 2], vec![0.7, -0.4]);
        let y = spectral_conv(&x, &spectrum, &params).unwrap();

        let freq = dft(&ComplexPair::from_real(x), false);
        let gated_re = params.real[0].apply(&freq.re).unwrap();
        let gated_im = params.imag[0].apply(&freq.im).unwrap();
        let time = dft(&ComplexPair::new(gated_re, gated_im).unwrap(), true);
        for (a, b) in y.values().iter().zip(time.re.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_conv_matches_composed_primitive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let n = 4;
        let t = 2;
        // A softmax-like random adjacency.
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = row.iter().sum();
            for j in 0..n {
                adj[i * n + j] = row[j] / s;
            }
        }
        let adjacency = adjacency_from(adj, n);
        let spectrum = normalized_laplacian(&adjacency);
        let params = SpectralConvParams::init(3, 3, &mut rng);
        let x_vals: Vec<f64> = (0..n * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(&[n, t], x_vals);
        let y = spectral_conv(&x, &spectrum, &params).unwrap();
        assert_eq!(y.shape(), &[n, params.output_width(t)]);

        // Step-by-step composition with the module's own primitives.
        let node_spec = gft(&x, &spectrum.basis, false).unwrap();
        let freq = dft(&ComplexPair::from_real(node_spec), false);
        let mut blocks = Vec::new();
        for c in 0..params.channels {
            let re = glu(
                &freq.re.conv1d_same(&params.real[c].value_kernel, &params.real[c].value_bias),
                &freq.re.conv1d_same(&params.real[c].gate_kernel, &params.real[c].gate_bias),
            )
            .unwrap();
            let im = glu(
                &freq.im.conv1d_same(&params.imag[c].value_kernel, &params.imag[c].value_bias),
                &freq.im.conv1d_same(&params.imag[c].gate_kernel, &params.imag[c].gate_bias),
            )
            .unwrap();
            let time = dft(&ComplexPair::new(re, im).unwrap(), true);
            blocks.push(gft(&time.re, &spectrum.basis, true).unwrap());
        }
        let oracle = Tensor::concat_cols(&blocks);
        for (a, b) in y.values().iter().zip(oracle.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        for v in y.values() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn fc_head_eval_mode_is_deterministic_and_zero_weights_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let params = FcHeadParams::init(4, 6, 0.5, 0.2, &mut rng);
        let x = Tensor::new(&[3, 4], (0..12).map(|i| i as f64 * 0.17 - 1.0).collect());
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(999);
        let a = fc_head(&x, &params, false, &mut r1).unwrap();
        let b = fc_head(&x, &params, false, &mut r2).unwrap();
        assert_eq!(a.values(), b.values());

        let mut zeroed = params.clone();
        zeroed.w1 = Tensor::param(&[4, 6], vec![0.0; 24]);
        zeroed.b1 = Tensor::param(&[6], vec![0.0; 6]);
        zeroed.w2 = Tensor::param(&[6, 6], vec![0.0; 36]);
        zeroed.b2 = Tensor::param(&[6], vec![0.0; 6]);
        let y = fc_head(&x, &zeroed, false, &mut r1).unwrap();
        assert_eq!(y.values(), vec![0.0; 18]);
    }

    #[test]
    fn fc_head_matches_composed_primitives() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let params = FcHeadParams::init(4, 5, 0.0, 0.2, &mut rng);
        let x = Tensor::new(&[2, 4], (0..8).map(|i| (i as f64).sin()).collect());
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let y = fc_head(&x, &params, false, &mut r).unwrap();
        let oracle = x
            .layer_norm(&params.ln_gain, &params.ln_bias, params.eps)
            .leaky_relu(params.leaky_slope)
            .matmul(&params.w1)
            .unwrap()
            .add_row(&params.b1)
            .matmul(&params.w2)
            .unwrap()
            .add_row(&params.b2);
        for (a, b) in y.values().iter().zip(oracle.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_through_spectral_conv_and_fc_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let n = 3;
        let spectrum = normalized_laplacian(&adjacency_from(
            vec![0.4, 0.3, 0.3, 0.2, 0.5, 0.3, 0.1, 0.1, 0.8],
            n,
        ));
        let conv = SpectralConvParams::init(2, 3, &mut rng);
        let head = FcHeadParams::init(conv.output_width(2), 4, 0.0, 0.2, &mut rng);
        let x = Tensor::new(&[n, 2], vec![0.3, -0.6, 0.8, 0.2, -0.4, 0.5]);

        let params: Vec<Tensor> = vec![
            conv.real[0].value_kernel.clone(),
            conv.real[0].gate_kernel.clone(),
            conv.imag[1].value_kernel.clone(),
            conv.imag[1].gate_bias.clone(),
            head.ln_gain.clone(),
            head.w1.clone(),
            head.b2.clone(),
        ];
        let err = crate::tensor::grad_check(
            |p| {
                let mut conv = conv.clone();
                conv.real[0].value_kernel = p[0].clone();
                conv.real[0].gate_kernel = p[1].clone();
                conv.imag[1].value_kernel = p[2].clone();
                conv.imag[1].gate_bias = p[3].clone();
                let mut head = head.clone();
                head.ln_gain = p[4].clone();
                head.w1 = p[5].clone();
                head.b2 = p[6].clone();
                let features = spectral_conv(&x, &spectrum, &conv)?;
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let out = fc_head(&features, &head, false, &mut rng)?;
                Ok(out.mul(&out).sum())
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "spectral path grad err {err}");
    }
}
