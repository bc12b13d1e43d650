//! Latent sensor-graph inference: a GRU encodes each sensor's series and
//! scaled dot-product self-attention over the final hidden states produces a
//! row-stochastic adjacency matrix over sensors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::glorot;
use crate::tensor::Tensor;

/// Gate weights of a single GRU cell, shared across all sensor streams.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_update: Tensor,
    pub u_update: Tensor,
    pub b_update: Tensor,
    pub w_reset: Tensor,
    pub u_reset: Tensor,
    pub b_reset: Tensor,
    pub w_cand: Tensor,
    pub u_cand: Tensor,
    pub b_cand: Tensor,
}

impl GruParams {
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> GruParams {
        let w = |rng: &mut R| glorot(&[input_dim, hidden_dim], rng);
        let u = |rng: &mut R| glorot(&[hidden_dim, hidden_dim], rng);
        GruParams {
            input_dim,
            hidden_dim,
            w_update: w(rng),
            u_update: u(rng),
            b_update: Tensor::param(&[hidden_dim], vec![0.0; hidden_dim]),
            w_reset: w(rng),
            u_reset: u(rng),
            b_reset: Tensor::param(&[hidden_dim], vec![0.0; hidden_dim]),
            w_cand: w(rng),
            u_cand: u(rng),
            b_cand: Tensor::param(&[hidden_dim], vec![0.0; hidden_dim]),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> GruParams {
        let w = || Tensor::param(&[input_dim, hidden_dim], vec![0.0; input_dim * hidden_dim]);
        let u = || Tensor::param(&[hidden_dim, hidden_dim], vec![0.0; hidden_dim * hidden_dim]);
        let b = || Tensor::param(&[hidden_dim], vec![0.0; hidden_dim]);
        GruParams {
            input_dim,
            hidden_dim,
            w_update: w(),
            u_update: u(),
            b_update: b(),
            w_reset: w(),
            u_reset: u(),
            b_reset: b(),
            w_cand: w(),
            u_cand: u(),
            b_cand: b(),
        }
    }
}

/// One GRU step over a batch of streams: `x` is batch-by-input_dim, `h` is
/// batch-by-hidden_dim.
pub fn gru_cell(x: &Tensor, h: &Tensor, params: &GruParams) -> Result<Tensor> {
    let update = x
        .matmul(&params.w_update)?
        .add(&h.matmul(&params.u_update)?)
        .add_row(&params.b_update)
        .sigmoid();
    let reset = x
        .matmul(&params.w_reset)?
        .add(&h.matmul(&params.u_reset)?)
        .add_row(&params.b_reset)
        .sigmoid();
    let candidate = x
        .matmul(&params.w_cand)?
        .add(&reset.mul(h).matmul(&params.u_cand)?)
        .add_row(&params.b_cand)
        .tanh();
    let keep = update.neg().add_scalar(1.0); // 1 - z
    Ok(keep.mul(h).add(&update.mul(&candidate)))
}

/// Run the shared GRU over an n-sensors-by-t-steps series, one scalar input
/// stream per sensor, and return the final hidden state per sensor
/// (n-by-hidden_dim). The initial hidden state is zero.
pub fn gru_encode(series: &Tensor, params: &GruParams) -> Result<Tensor> {
    assert_eq!(
        params.input_dim, 1,
        "gru_encode feeds one scalar per sensor per step"
    );
    let n = series.rows();
    let t = series.cols();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let mut h = Tensor::zeros(&[n, params.hidden_dim]);
    for step in 0..t {
        let x = series.col(step);
        h = gru_cell(&x, &h, params)?;
    }
    Ok(h)
}

/// Query/key projections for the latent-graph attention.
#[derive(Debug, Clone)]
pub struct LatentGraphParams {
    pub w_query: Tensor,
    pub w_key: Tensor,
    pub key_dim: usize,
}

impl LatentGraphParams {
    pub fn init<R: Rng>(hidden_dim: usize, key_dim: usize, rng: &mut R) -> LatentGraphParams {
        LatentGraphParams {
            w_query: glorot(&[hidden_dim, key_dim], rng),
            w_key: glorot(&[hidden_dim, key_dim], rng),
            key_dim,
        }
    }
}

/// Learned row-stochastic adjacency over sensors. All entries lie in (0, 1)
/// and every row sums to 1 when produced by [`latent_adjacency`]; tests may
/// construct arbitrary matrices directly.
#[derive(Debug, Clone)]
pub struct SensorAdjacency {
    pub weights: Tensor,
}

impl SensorAdjacency {
    pub fn new(weights: Tensor) -> SensorAdjacency {
        assert_eq!(weights.rows(), weights.cols(), "adjacency must be square");
        SensorAdjacency { weights }
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }
}

/// Scaled dot-product self-attention over sensor encodings:
/// `softmax_rows((h W_q)(h W_k)^T / sqrt(key_dim))`.
pub fn latent_adjacency(h: &Tensor, params: &LatentGraphParams) -> Result<SensorAdjacency> {
    let query = h.matmul(&params.w_query)?;
    let key = h.matmul(&params.w_key)?;
    let scale = 1.0 / (params.key_dim as f64).sqrt();
    let scores = query.matmul(&key.transpose())?.mul_scalar(scale);
    Ok(SensorAdjacency::new(scores.softmax_rows()))
}
