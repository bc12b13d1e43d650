//! Embedding of ordered categorical fields and attention fusion of the
//! resulting text feature with per-sensor feature tokens.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{glorot, small_normal};
use crate::tensor::Tensor;

/// Shared embedding table over the union vocabulary of all categorical
/// fields (id 0 is reserved for unknown categories), plus the projection
/// mapping the concatenated field embeddings to the fused feature width.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub vocab_size: usize,
    pub dim: usize,
    pub field_count: usize,
    pub table: Tensor,
    pub w_proj: Tensor,
    pub b_proj: Tensor,
}

impl EmbeddingTable {
    pub fn init<R: Rng>(
        vocab_size: usize,
        dim: usize,
        field_count: usize,
        feature_dim: usize,
        rng: &mut R,
    ) -> EmbeddingTable {
        EmbeddingTable {
            vocab_size,
            dim,
            field_count,
            table: small_normal(&[vocab_size, dim], 0.01, rng),
            w_proj: glorot(&[field_count * dim, feature_dim], rng),
            b_proj: Tensor::param(&[feature_dim], vec![0.0; feature_dim]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w_proj.cols()
    }
}

/// Look up one embedding per categorical field, concatenate them in field
/// order (the order carries meaning) and project to the fused width.
/// Returns a 1-by-d row.
pub fn embed_text(tokens: &[usize], table: &EmbeddingTable) -> Result<Tensor> {
    assert_eq!(
        tokens.len(),
        table.field_count,
        "expected {} categorical tokens, got {}",
        table.field_count,
        tokens.len()
    );
    for (field, &id) in tokens.iter().enumerate() {
        if id >= table.vocab_size {
            return Err(Error::OutOfVocabulary { field, id });
        }
    }
    let gathered = table.table.gather_rows(tokens);
    gathered
        .flatten_row()
        .matmul(&table.w_proj)
        .map(|r| r.add_row(&table.b_proj))
}

/// Attention-fused sample feature (a 1-by-d row).
#[derive(Debug, Clone)]
pub struct FusedFeature {
    pub z_att: Tensor,
}

/// Scaled dot-product attention of the text feature over the sensor tokens:
/// `weights = softmax(z_embd tokens^T / sqrt(d))`, `z_att = weights tokens`.
pub fn attention_fuse(z_embd: &Tensor, sensor_tokens: &Tensor) -> Result<FusedFeature> {
    let d = z_embd.cols();
    if sensor_tokens.cols() != d || z_embd.rows() != 1 {
        return Err(Error::ShapeMismatch {
            op: "attention_fuse",
            lhs: z_embd.shape().to_vec(),
            rhs: sensor_tokens.shape().to_vec(),
        });
    }
    let scale = 1.0 / (d as f64).sqrt();
    let weights = z_embd
        .matmul(&sensor_tokens.transpose())?
        .mul_scalar(scale)
        .softmax_rows();
    Ok(FusedFeature {
        z_att: weights.matmul(sensor_tokens)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lookup_returns_table_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table = EmbeddingTable::init(5, 3, 2, 4, &mut rng);
        let gathered = table.table.gather_rows(&[2, 4]);
        assert_eq!(
            &gathered.values()[0..3],
            &table.table.values()[2 * 3..2 * 3 + 3]
        );
        assert_eq!(
            &gathered.values()[3..6],
            &table.table.values()[4 * 3..4 * 3 + 3]
        );
    }

    #[test]
    fn zero_table_projects_to_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut table = EmbeddingTable::init(4, 2, 2, 3, &mut rng);
        table.table = Tensor::param(&[4, 2], vec![0.0; 8]);
        table.b_proj = Tensor::param(&[3], vec![0.7, -0.1, 0.4]);
        let z = embed_text(&[1, 3], &table).unwrap();
        assert_eq!(z.values(), table.b_proj.values());
    }

    #[test]
    fn embedding_matches_concat_then_affine_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let table = EmbeddingTable::init(6, 2, 3, 4, &mut rng);
        let tokens = [5usize, 0, 2];
        let z = embed_text(&tokens, &table).unwrap();

        let tv = table.table.values();
        let mut concat = Vec::new();
        for &id in &tokens {
            concat.extend_from_slice(&tv[id * 2..id * 2 + 2]);
        }
        let w = table.w_proj.values();
        for j in 0..4 {
            let mut acc = table.b_proj.values()[j];
            for (i, c) in concat.iter().enumerate() {
                acc += c * w[i * 4 + j];
            }
            assert!((z.values()[j] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_vocabulary_names_field_and_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let table = EmbeddingTable::init(4, 2, 2, 3, &mut rng);
        match embed_text(&[1, 9], &table) {
            Err(Error::OutOfVocabulary { field: 1, id: 9 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn order_sensitivity_of_distinct_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let table = EmbeddingTable::init(6, 3, 2, 4, &mut rng);
        let a = embed_text(&[1, 2], &table).unwrap();
        let b = embed_text(&[2, 1], &table).unwrap();
        assert!(
            a.values()
                .iter()
                .zip(b.values())
                .any(|(x, y)| (x - y).abs() > 1e-12),
            "swapping distinct field values must change the embedding"
        );
    }

    #[test]
    fn single_token_attention_returns_it_exactly() {
        let z = Tensor::new(&[1, 3], vec![0.5, -0.2, 0.9]);
        let token = Tensor::new(&[1, 3], vec![1.5, 0.3, -0.7]);
        let fused = attention_fuse(&z, &token).unwrap();
        assert_eq!(fused.z_att.values(), token.values());
    }

    #[test]
    fn identical_tokens_fuse_to_that_token() {
        let z = Tensor::new(&[1, 2], vec![0.4, -0.9]);
        let tokens = Tensor::new(&[3, 2], vec![0.8, 0.1, 0.8, 0.1, 0.8, 0.1]);
        let fused = attention_fuse(&z, &tokens).unwrap();
        assert!((fused.z_att.values()[0] - 0.8).abs() < 1e-12);
        assert!((fused.z_att.values()[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_token_case_matches_softmax_weighted_sum() {
        let z = Tensor::new(&[1, 2], vec![1.0, -0.5]);
        let tokens = Tensor::new(&[2, 2], vec![0.3, 0.7, -0.8, 0.2]);
        let fused = attention_fuse(&z, &tokens).unwrap();

        let scale = 1.0 / 2f64.sqrt();
        let s0 = (1.0 * 0.3 + -0.5 * 0.7) * scale;
        let s1 = (1.0 * -0.8 + -0.5 * 0.2) * scale;
        let m = s0.max(s1);
        let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
        let w0 = e0 / (e0 + e1);
        let w1 = e1 / (e0 + e1);
        let want = [w0 * 0.3 + w1 * -0.8, w0 * 0.7 + w1 * 0.2];
        for (got, want) in fused.z_att.values().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let z = Tensor::new(&[1, 3], vec![0.0; 3]);
        let tokens = Tensor::new(&[2, 2], vec![0.0; 4]);
        assert!(attention_fuse(&z, &tokens).is_err());
    }

    #[test]
    fn fused_feature_stays_in_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let d = 4;
            let m = 5;
            let z = Tensor::new(&[1, d], (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let tokens =
                Tensor::new(&[m, d], (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let fused = attention_fuse(&z, &tokens).unwrap();
            for j in 0..d {
                let col: Vec<f64> = (0..m).map(|i| tokens.values()[i * d + j]).collect();
                let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = fused.z_att.values()[j];
                assert!(v >= min - 1e-12 && v <= max + 1e-12);
            }
        }
    }

    #[test]
    fn gradient_through_embedding_and_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let table = EmbeddingTable::init(5, 2, 2, 3, &mut rng);
        let tokens_in = [1usize, 4];
        let sensor_tokens = Tensor::param(
            &[3, 3],
            (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let params = vec![
            table.table.clone(),
            table.w_proj.clone(),
            table.b_proj.clone(),
            sensor_tokens,
        ];
        let err = crate::tensor::grad_check(
            |p| {
                let mut t = table.clone();
                t.table = p[0].clone();
                t.w_proj = p[1].clone();
                t.b_proj = p[2].clone();
                let z = embed_text(&tokens_in, &t)?;
                let fused = attention_fuse(&z, &p[3])?;
                Ok(fused.z_att.mul(&fused.z_att).sum())
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "text path grad err {err}");
    }
}
