//! Multi-label multivariate time-series classification with latent sensor
//! graphs, joint spectral (graph + frequency) convolution, text-sensor
//! attention fusion, a label co-occurrence graph attention head, and
//! imbalance-aware semi-supervised training.

pub mod checkpoint;
pub mod data;
pub mod dft;
pub mod eig;
pub mod error;
pub mod init;
pub mod labelgraph;
pub mod latent;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod spectral;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
