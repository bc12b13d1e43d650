//! The full classifier: latent sensor graph -> spectral convolution ->
//! per-sensor feature tokens -> text embedding and attention fusion ->
//! per-label projections -> label-graph attention -> one logit per label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSchema, Sample};
use crate::error::{Error, Result};
use crate::init::glorot;
use crate::labelgraph::{gat_forward, GatParams, LabelCorrelation};
use crate::latent::{gru_encode, latent_adjacency, GruParams, LatentGraphParams, SensorAdjacency};
use crate::spectral::{
    cheb_gcn_cell, fc_head, normalized_laplacian, spectral_conv, ChebGcnParams, FcHeadParams,
    GraphSpectrum, SpectralConvParams,
};
use crate::tensor::Tensor;
use crate::text::{attention_fuse, embed_text, EmbeddingTable};

/// Architecture hyperparameters. Defaults follow the reference setup:
/// 16-wide embeddings, 64-wide fused features, dropout 0.2, LeakyReLU slope
/// 0.2, and a label-correlation threshold of 0.4 applied by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    /// Width of the latent-graph query/key projections.
    #[serde(default = "default_attention_dim")]
    pub attention_dim: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_label_feature_dim")]
    pub label_feature_dim: usize,
    #[serde(default = "default_gat_heads")]
    pub gat_heads: usize,
    #[serde(default = "default_conv_channels")]
    pub conv_channels: usize,
    #[serde(default = "default_conv_kernel")]
    pub conv_kernel: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    /// Insert the order-1 Chebyshev graph convolution after the spectral
    /// block; this also routes gradients into the latent-graph parameters.
    #[serde(default)]
    pub use_cheb: bool,
}

fn default_hidden_dim() -> usize {
    64
}
fn default_attention_dim() -> usize {
    64
}
fn default_embedding_dim() -> usize {
    16
}
fn default_feature_dim() -> usize {
    64
}
fn default_label_feature_dim() -> usize {
    16
}
fn default_gat_heads() -> usize {
    2
}
fn default_conv_channels() -> usize {
    4
}
fn default_conv_kernel() -> usize {
    3
}
fn default_dropout() -> f64 {
    0.2
}
fn default_leaky_slope() -> f64 {
    0.2
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            hidden_dim: default_hidden_dim(),
            attention_dim: default_attention_dim(),
            embedding_dim: default_embedding_dim(),
            feature_dim: default_feature_dim(),
            label_feature_dim: default_label_feature_dim(),
            gat_heads: default_gat_heads(),
            conv_channels: default_conv_channels(),
            conv_kernel: default_conv_kernel(),
            dropout: default_dropout(),
            leaky_slope: default_leaky_slope(),
            use_cheb: false,
        }
    }
}

/// Per-label linear maps from the fused feature to label node features.
#[derive(Debug, Clone)]
pub struct LabelProjParams {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl LabelProjParams {
    fn init<R: Rng>(labels: usize, feature_dim: usize, label_dim: usize, rng: &mut R) -> Self {
        LabelProjParams {
            weights: (0..labels)
                .map(|_| glorot(&[feature_dim, label_dim], rng))
                .collect(),
            biases: (0..labels)
                .map(|_| Tensor::param(&[label_dim], vec![0.0; label_dim]))
                .collect(),
        }
    }
}

#[derive(Clone)]
pub struct GrassNet {
    pub config: ModelConfig,
    pub corr: LabelCorrelation,
    pub sensor_count: usize,
    pub steps: usize,
    pub gru: GruParams,
    pub latent: LatentGraphParams,
    pub conv: SpectralConvParams,
    pub cheb: Option<ChebGcnParams>,
    pub head: FcHeadParams,
    pub embedding: EmbeddingTable,
    pub label_proj: LabelProjParams,
    pub gat: GatParams,
}

impl GrassNet {
    pub fn new(
        schema: &DatasetSchema,
        config: ModelConfig,
        corr: LabelCorrelation,
        seed: u64,
    ) -> GrassNet {
        assert_eq!(corr.labels, schema.label_count(), "label graph size");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = SpectralConvParams::init(config.conv_channels, config.conv_kernel, &mut rng);
        let spec_width = conv.output_width(schema.max_steps);
        GrassNet {
            gru: GruParams::init(1, config.hidden_dim, &mut rng),
            latent: LatentGraphParams::init(config.hidden_dim, config.attention_dim, &mut rng),
            cheb: config
                .use_cheb
                .then(|| ChebGcnParams::init(spec_width, spec_width, &mut rng)),
            head: FcHeadParams::init(
                spec_width,
                config.feature_dim,
                config.dropout,
                config.leaky_slope,
                &mut rng,
            ),
            embedding: EmbeddingTable::init(
                schema.vocab_total(),
                config.embedding_dim,
                schema.field_count(),
                config.feature_dim,
                &mut rng,
            ),
            label_proj: LabelProjParams::init(
                schema.label_count(),
                config.feature_dim,
                config.label_feature_dim,
                &mut rng,
            ),
            gat: GatParams::init(
                config.label_feature_dim,
                config.gat_heads,
                config.leaky_slope,
                &mut rng,
            ),
            conv,
            sensor_count: schema.sensor_count(),
            steps: schema.max_steps,
            corr,
            config,
        }
    }

    pub fn label_count(&self) -> usize {
        self.corr.labels
    }

    fn series_tensor(&self, sample: &Sample) -> Tensor {
        Tensor::new(&[self.sensor_count, self.steps], sample.series.clone())
    }

    /// Learned adjacency for one sample (differentiable into the GRU and
    /// latent-graph parameters).
    pub fn sample_adjacency(&self, sample: &Sample) -> Result<SensorAdjacency> {
        let series = self.series_tensor(sample);
        let hidden = gru_encode(&series, &self.gru)?;
        latent_adjacency(&hidden, &self.latent)
    }

    /// Laplacian eigenbasis for one sample. The decomposition is per-batch
    /// preprocessing: it is built from detached adjacency values and no
    /// gradient flows through it.
    pub fn sample_spectrum(&self, sample: &Sample) -> Result<GraphSpectrum> {
        let adjacency = self.sample_adjacency(sample)?;
        Ok(normalized_laplacian(&SensorAdjacency::new(
            adjacency.weights.detach(),
        )))
    }

    /// Forward pass for one sample against a fixed spectrum, producing a
    /// 1-by-labels logit row. Dropout draws from `rng` only when `training`.
    pub fn forward_sample<R: Rng>(
        &self,
        sample: &Sample,
        spectrum: &GraphSpectrum,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        let series = self.series_tensor(sample);
        let mut features = spectral_conv(&series, spectrum, &self.conv)?;
        if let Some(cheb) = &self.cheb {
            let adjacency = self.sample_adjacency(sample)?;
            features = cheb_gcn_cell(&features, &adjacency, cheb)?;
        }
        let tokens = fc_head(&features, &self.head, training, rng)?;
        let text = embed_text(&sample.tokens, &self.embedding)?;
        let fused = attention_fuse(&text, &tokens)?;

        let label_rows: Vec<Tensor> = self
            .label_proj
            .weights
            .iter()
            .zip(&self.label_proj.biases)
            .map(|(w, b)| fused.z_att.matmul(w).map(|r| r.add_row(b)))
            .collect::<Result<_>>()?;
        let label_features = Tensor::concat_rows(&label_rows);
        let logits = gat_forward(&label_features, &self.corr, &self.gat)?;
        Ok(logits.reshape(&[1, self.label_count()]))
    }

    /// Batch forward: per-sample spectra are computed as preprocessing, then
    /// each sample runs through the differentiable path; rows stack into a
    /// batch-by-labels logit matrix.
    pub fn forward_batch<R: Rng>(
        &self,
        samples: &[&Sample],
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        assert!(!samples.is_empty(), "empty batch");
        let mut rows = Vec::with_capacity(samples.len());
        for sample in samples {
            let spectrum = self.sample_spectrum(sample)?;
            rows.push(self.forward_sample(sample, &spectrum, training, rng)?);
        }
        Ok(Tensor::concat_rows(&rows))
    }

    /// Deterministic per-label probabilities (eval mode).
    pub fn predict_proba(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = self.forward_batch(samples, false, &mut rng)?;
        Ok(logits.sigmoid().values().to_vec())
    }

    /// Trainable parameters with their names, in a fixed order (tensors are
    /// cheap handles, so this clones nothing but reference counts).
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut clone = self.clone();
        let mut out = Vec::new();
        clone.visit_params_mut(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    /// Visit every trainable parameter in a fixed order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, tensor) in self.named_params() {
            f(&name, &tensor);
        }
    }

    /// Visit every trainable parameter mutably, in the same fixed order as
    /// [`GrassNet::visit_params`].
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("gru/w_update", &mut self.gru.w_update);
        f("gru/u_update", &mut self.gru.u_update);
        f("gru/b_update", &mut self.gru.b_update);
        f("gru/w_reset", &mut self.gru.w_reset);
        f("gru/u_reset", &mut self.gru.u_reset);
        f("gru/b_reset", &mut self.gru.b_reset);
        f("gru/w_cand", &mut self.gru.w_cand);
        f("gru/u_cand", &mut self.gru.u_cand);
        f("gru/b_cand", &mut self.gru.b_cand);
        f("latent/w_query", &mut self.latent.w_query);
        f("latent/w_key", &mut self.latent.w_key);
        for (i, branch) in self.conv.real.iter_mut().enumerate() {
            f(&format!("conv/re{i}/value_kernel"), &mut branch.value_kernel);
            f(&format!("conv/re{i}/value_bias"), &mut branch.value_bias);
            f(&format!("conv/re{i}/gate_kernel"), &mut branch.gate_kernel);
            f(&format!("conv/re{i}/gate_bias"), &mut branch.gate_bias);
        }
        for (i, branch) in self.conv.imag.iter_mut().enumerate() {
            f(&format!("conv/im{i}/value_kernel"), &mut branch.value_kernel);
            f(&format!("conv/im{i}/value_bias"), &mut branch.value_bias);
            f(&format!("conv/im{i}/gate_kernel"), &mut branch.gate_kernel);
            f(&format!("conv/im{i}/gate_bias"), &mut branch.gate_bias);
        }
        if let Some(cheb) = &mut self.cheb {
            f("cheb/theta", &mut cheb.theta);
        }
        f("head/ln_gain", &mut self.head.ln_gain);
        f("head/ln_bias", &mut self.head.ln_bias);
        f("head/w1", &mut self.head.w1);
        f("head/b1", &mut self.head.b1);
        f("head/w2", &mut self.head.w2);
        f("head/b2", &mut self.head.b2);
        f("embed/table", &mut self.embedding.table);
        f("embed/w_proj", &mut self.embedding.w_proj);
        f("embed/b_proj", &mut self.embedding.b_proj);
        for (i, (w, b)) in self
            .label_proj
            .weights
            .iter_mut()
            .zip(&mut self.label_proj.biases)
            .enumerate()
        {
            f(&format!("label_proj/w{i}"), w);
            f(&format!("label_proj/b{i}"), b);
        }
        for k in 0..self.gat.heads {
            f(&format!("gat/h{k}/transform"), &mut self.gat.transforms[k]);
            f(&format!("gat/h{k}/attn_src"), &mut self.gat.attn_src[k]);
            f(&format!("gat/h{k}/attn_dst"), &mut self.gat.attn_dst[k]);
        }
        f("gat/out_weight", &mut self.gat.out_weight);
        f("gat/out_bias", &mut self.gat.out_bias);
    }

    /// Parameters in visit order, for gradient checking.
    pub fn params_vec(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, t| out.push(t.clone()));
        out
    }

    /// Replace the parameters from a vector in visit order.
    pub fn set_params_vec(&mut self, params: &[Tensor]) {
        let mut iter = params.iter();
        self.visit_params_mut(&mut |name, t| {
            let next = iter
                .next()
                .unwrap_or_else(|| panic!("missing parameter {name}"));
            assert_eq!(next.shape(), t.shape(), "shape of {name}");
            *t = next.clone();
        });
    }

    /// Load named parameter values (e.g. from a checkpoint).
    pub fn load_named_params(&mut self, named: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let mut missing = Vec::new();
        self.visit_params_mut(&mut |name, t| {
            match named.iter().find(|(n, _, _)| n == name) {
                Some((_, shape, values)) => {
                    assert_eq!(shape.as_slice(), t.shape(), "shape of {name}");
                    *t = Tensor::param(shape, values.clone());
                }
                None => missing.push(name.to_string()),
            }
        });
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "missing parameters: {}",
                missing.join(", ")
            )))
        }
    }
}
