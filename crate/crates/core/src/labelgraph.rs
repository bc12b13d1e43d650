//! Label correlation graph: directed co-occurrence statistics thresholded
//! into a binary adjacency, and a multi-head graph attention network over
//! label nodes producing one logit per label.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::init::glorot;
use crate::tensor::Tensor;

/// Pairwise positive co-occurrence counts over observed labels.
/// `m[i][j]` counts samples where labels i and j are both observed positive;
/// `n[i]` counts samples where label i is observed positive (= `m[i][i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct CoOccurrence {
    pub labels: usize,
    pub m: Vec<u64>,
    pub n: Vec<u64>,
}

/// Count positive co-occurrences over per-sample label vectors with masks
/// (mask entry 1 = observed). Masked-out entries never count.
pub fn build_cooccurrence<'a, I>(labelsets: I, labels: usize) -> CoOccurrence
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut m = vec![0u64; labels * labels];
    let mut n = vec![0u64; labels];
    for (y, mask) in labelsets {
        debug_assert_eq!(y.len(), labels);
        debug_assert_eq!(mask.len(), labels);
        let positive: Vec<usize> = (0..labels)
            .filter(|&i| mask[i] != 0.0 && y[i] != 0.0)
            .collect();
        for &i in &positive {
            n[i] += 1;
            for &j in &positive {
                m[i * labels + j] += 1;
            }
        }
    }
    CoOccurrence { labels, m, n }
}

/// Directed binary label correlation: `p[i][j] = m[i][j] / n[i]` (0 when
/// `n[i]` is 0) thresholded at `tau`. The diagonal is 1 whenever a label has
/// any positives, so those nodes keep a self-loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelCorrelation {
    pub labels: usize,
    pub tau: f64,
    pub p: Vec<f64>,
    pub adjacency: Vec<u8>,
}

pub fn threshold_correlation(co: &CoOccurrence, tau: f64) -> LabelCorrelation {
    assert!((0.0..=1.0).contains(&tau), "tau must lie in [0, 1]");
    let c = co.labels;
    let mut p = vec![0.0; c * c];
    let mut adjacency = vec![0u8; c * c];
    for i in 0..c {
        for j in 0..c {
            let pij = if co.n[i] == 0 {
                0.0
            } else {
                co.m[i * c + j] as f64 / co.n[i] as f64
            };
            p[i * c + j] = pij;
            adjacency[i * c + j] = u8::from(pij >= tau);
        }
    }
    LabelCorrelation {
        labels: c,
        tau,
        p,
        adjacency,
    }
}

/// On-disk form of the binary correlation matrix: label count, threshold and
/// row-major 0/1 entries.
#[derive(Debug, Serialize, Deserialize)]
struct LabelCorrelationFile {
    labels: usize,
    tau: f64,
    entries: Vec<u8>,
}

impl LabelCorrelation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&LabelCorrelationFile {
            labels: self.labels,
            tau: self.tau,
            entries: self.adjacency.clone(),
        })
        .expect("serializable")
    }

    /// Rebuild from the exported form. The conditional probabilities are not
    /// part of the export; they are restored as the 0/1 entries themselves,
    /// which is consistent with the thresholding rule.
    pub fn from_json(text: &str) -> Result<LabelCorrelation> {
        let file: LabelCorrelationFile = serde_json::from_str(text)?;
        if file.entries.len() != file.labels * file.labels {
            return Err(crate::error::Error::Config(format!(
                "label graph: {} entries for {} labels",
                file.entries.len(),
                file.labels
            )));
        }
        Ok(LabelCorrelation {
            labels: file.labels,
            tau: file.tau,
            p: file.entries.iter().map(|&e| e as f64).collect(),
            adjacency: file.entries,
        })
    }

    /// Attention mask additive term: 0 inside a node's neighborhood, -1e9
    /// outside. Isolated rows fall back to a self-loop.
    fn mask_values(&self) -> Vec<f64> {
        let c = self.labels;
        let mut mask = vec![-1e9; c * c];
        for i in 0..c {
            let row = &self.adjacency[i * c..i * c + c];
            if row.iter().all(|&e| e == 0) {
                mask[i * c + i] = 0.0;
                continue;
            }
            for j in 0..c {
                if row[j] == 1 {
                    mask[i * c + j] = 0.0;
                }
            }
        }
        mask
    }
}

/// Multi-head GAT parameters. Each head has a node transform and a scoring
/// vector split into source/destination halves; head outputs are averaged
/// and projected to a scalar logit per label node.
#[derive(Debug, Clone)]
pub struct GatParams {
    pub heads: usize,
    pub transforms: Vec<Tensor>,
    pub attn_src: Vec<Tensor>,
    pub attn_dst: Vec<Tensor>,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
    pub leaky_slope: f64,
}

impl GatParams {
    pub fn init<R: Rng>(feature_dim: usize, heads: usize, leaky_slope: f64, rng: &mut R) -> GatParams {
        assert!(heads >= 1);
        GatParams {
            heads,
            transforms: (0..heads)
                .map(|_| glorot(&[feature_dim, feature_dim], rng))
                .collect(),
            attn_src: (0..heads).map(|_| glorot(&[feature_dim, 1], rng)).collect(),
            attn_dst: (0..heads).map(|_| glorot(&[feature_dim, 1], rng)).collect(),
            out_weight: glorot(&[feature_dim, 1], rng),
            out_bias: Tensor::param(&[1], vec![0.0]),
            leaky_slope,
        }
    }
}

/// Run the masked multi-head attention over label nodes and return one logit
/// per label (sigmoid is applied downstream by the loss and the metrics).
pub fn gat_forward(
    label_features: &Tensor,
    corr: &LabelCorrelation,
    params: &GatParams,
) -> Result<Tensor> {
    let c = corr.labels;
    assert_eq!(label_features.rows(), c, "one feature row per label");
    let mask = Tensor::new(&[c, c], corr.mask_values());
    let ones_row = Tensor::full(&[1, c], 1.0);
    let ones_col = Tensor::full(&[c, 1], 1.0);

    let mut head_sum: Option<Tensor> = None;
    for k in 0..params.heads {
        let transformed = label_features.matmul(&params.transforms[k])?;
        let src = transformed.matmul(&params.attn_src[k])?; // c-by-1
        let dst = transformed.matmul(&params.attn_dst[k])?;
        // e[i][j] = leaky_relu(src[i] + dst[j]), then mask and normalize.
        let scores = src
            .matmul(&ones_row)?
            .add(&ones_col.matmul(&dst.transpose())?)
            .leaky_relu(params.leaky_slope);
        let attention = scores.add(&mask).softmax_rows();
        let aggregated = attention.matmul(&transformed)?;
        head_sum = Some(match head_sum {
            Some(acc) => acc.add(&aggregated),
            None => aggregated,
        });
    }
    let averaged = head_sum
        .expect("at least one head")
        .mul_scalar(1.0 / params.heads as f64);
    let logits = averaged.matmul(&params.out_weight)?.add_row(&params.out_bias);
    Ok(logits.reshape(&[c]))
}

#[cfg(test)]
#[allow(clippy::erasing_op, clippy::identity_op)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sets(rows: &[(&[f64], &[f64])]) -> Vec<(Vec<f64>, Vec<f64>)> {
        rows.iter()
            .map(|(y, m)| (y.to_vec(), m.to_vec()))
            .collect()
    }

    fn co(rows: &[(Vec<f64>, Vec<f64>)], c: usize) -> CoOccurrence {
        build_cooccurrence(rows.iter().map(|(y, m)| (y.as_slice(), m.as_slice())), c)
    }

    #[test]
    fn hand_counted_asymmetry_example() {
        // Samples {l1,l2}, {l1}, {l2,l3}.
        let rows = sets(&[
            (&[1.0, 1.0, 0.0], &[1.0, 1.0, 1.0]),
            (&[1.0, 0.0, 0.0], &[1.0, 1.0, 1.0]),
            (&[0.0, 1.0, 1.0], &[1.0, 1.0, 1.0]),
        ]);
        let counts = co(&rows, 3);
        assert_eq!(counts.n, vec![2, 2, 1]);
        assert_eq!(counts.m[0 * 3 + 1], 1);
        let corr = threshold_correlation(&counts, 0.0);
        assert!((corr.p[0 * 3 + 1] - 0.5).abs() < 1e-15); // p(l2|l1)
        assert!((corr.p[1 * 3 + 2] - 0.5).abs() < 1e-15); // p(l3|l2)
        assert!((corr.p[2 * 3 + 1] - 1.0).abs() < 1e-15); // p(l2|l3)
        assert!(corr.p[1 * 3 + 2] != corr.p[2 * 3 + 1]);
    }

    #[test]
    fn empty_input_yields_zeros_with_zero_over_zero_convention() {
        let counts = co(&[], 2);
        assert_eq!(counts.n, vec![0, 0]);
        let corr = threshold_correlation(&counts, 0.4);
        assert!(corr.p.iter().all(|&p| p == 0.0));
        assert!(corr.adjacency.iter().all(|&a| a == 0));
    }

    #[test]
    fn all_labels_everywhere_gives_all_ones() {
        let rows = sets(&[
            (&[1.0, 1.0], &[1.0, 1.0]),
            (&[1.0, 1.0], &[1.0, 1.0]),
        ]);
        let corr = threshold_correlation(&co(&rows, 2), 0.4);
        assert!(corr.p.iter().all(|&p| (p - 1.0).abs() < 1e-15));
        assert!(corr.adjacency.iter().all(|&a| a == 1));
    }

    #[test]
    fn threshold_rule_is_inclusive() {
        let counts = CoOccurrence {
            labels: 2,
            m: vec![2, 1, 1, 2],
            n: vec![2, 2],
        };
        // p01 = 0.5 >= 0.4 keeps the edge.
        let corr = threshold_correlation(&counts, 0.4);
        assert_eq!(corr.adjacency[1], 1);
        // p = 0.39 < 0.4 drops it.
        let counts = CoOccurrence {
            labels: 2,
            m: vec![100, 39, 39, 100],
            n: vec![100, 100],
        };
        let corr = threshold_correlation(&counts, 0.4);
        assert_eq!(corr.adjacency[1], 0);
    }

    #[test]
    fn masked_entries_never_count() {
        let rows = sets(&[
            (&[1.0, 1.0], &[1.0, 0.0]), // l2 positive but unobserved
            (&[1.0, 1.0], &[1.0, 1.0]),
        ]);
        let counts = co(&rows, 2);
        assert_eq!(counts.n, vec![2, 1]);
        assert_eq!(counts.m[1], 1);
    }

    #[test]
    fn raising_tau_never_adds_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let c = 4;
            let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..30)
                .map(|_| {
                    let y = (0..c).map(|_| f64::from(rng.gen_bool(0.4))).collect();
                    let m = (0..c).map(|_| f64::from(rng.gen_bool(0.8))).collect();
                    (y, m)
                })
                .collect();
            let counts = co(&rows, c);
            let low = threshold_correlation(&counts, 0.3);
            let high = threshold_correlation(&counts, 0.7);
            for (l, h) in low.adjacency.iter().zip(&high.adjacency) {
                assert!(h <= l, "raising tau added an edge");
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let counts = CoOccurrence {
            labels: 2,
            m: vec![3, 2, 2, 4],
            n: vec![3, 4],
        };
        let corr = threshold_correlation(&counts, 0.4);
        let text = corr.to_json();
        let loaded = LabelCorrelation::from_json(&text).unwrap();
        assert_eq!(loaded.labels, corr.labels);
        assert_eq!(loaded.tau, corr.tau);
        assert_eq!(loaded.adjacency, corr.adjacency);
    }

    #[test]
    fn single_label_with_self_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let corr = LabelCorrelation {
            labels: 1,
            tau: 0.4,
            p: vec![1.0],
            adjacency: vec![1],
        };
        let params = GatParams::init(3, 2, 0.2, &mut rng);
        let features = Tensor::new(&[1, 3], vec![0.4, -0.9, 0.3]);
        let logits = gat_forward(&features, &corr, &params).unwrap();

        // alpha = 1, so the output is the projection of the averaged W l.
        let mut want = params.out_bias.values()[0];
        for k in 0..2 {
            let t = features.matmul(&params.transforms[k]).unwrap();
            let proj = t.matmul(&params.out_weight).unwrap();
            want += proj.values()[0] / 2.0;
        }
        assert!((logits.values()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn identical_features_give_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = 3;
        let corr = LabelCorrelation {
            labels: c,
            tau: 0.0,
            p: vec![1.0; 9],
            adjacency: vec![1; 9],
        };
        let params = GatParams::init(2, 1, 0.2, &mut rng);
        let features = Tensor::new(&[c, 2], vec![0.5, -0.3, 0.5, -0.3, 0.5, -0.3]);

        // Reproduce the head's attention matrix directly.
        let transformed = features.matmul(&params.transforms[0]).unwrap();
        let src = transformed.matmul(&params.attn_src[0]).unwrap();
        let dst = transformed.matmul(&params.attn_dst[0]).unwrap();
        let scores = src
            .matmul(&Tensor::full(&[1, c], 1.0))
            .unwrap()
            .add(&Tensor::full(&[c, 1], 1.0).matmul(&dst.transpose()).unwrap())
            .leaky_relu(0.2);
        let attention = scores
            .add(&Tensor::new(&[c, c], corr.mask_values()))
            .softmax_rows();
        for v in attention.values() {
            assert!((v - 1.0 / c as f64).abs() < 1e-12);
        }
        // And the full forward stays finite and well-shaped.
        let logits = gat_forward(&features, &corr, &params).unwrap();
        assert_eq!(logits.shape(), &[c]);
    }

    #[test]
    fn three_node_case_matches_dense_masked_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let c = 3;
        let d = 2;
        let corr = LabelCorrelation {
            labels: c,
            tau: 0.4,
            p: vec![1.0, 0.6, 0.0, 0.0, 1.0, 0.9, 0.0, 0.0, 1.0],
            adjacency: vec![1, 1, 0, 0, 1, 1, 0, 0, 1],
        };
        let params = GatParams::init(d, 2, 0.2, &mut rng);
        let features = Tensor::new(&[c, d], (0..c * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let logits = gat_forward(&features, &corr, &params).unwrap();

        // Dense oracle with scalar loops.
        let leaky = |x: f64| if x > 0.0 { x } else { 0.2 * x };
        let fv = features.values();
        let mut averaged = vec![0.0; c * d];
        for k in 0..2 {
            let w = params.transforms[k].values();
            let asrc = params.attn_src[k].values();
            let adst = params.attn_dst[k].values();
            let mut t = vec![0.0; c * d];
            for i in 0..c {
                for j in 0..d {
                    for q in 0..d {
                        t[i * d + j] += fv[i * d + q] * w[q * d + j];
                    }
                }
            }
            for i in 0..c {
                let neighbors: Vec<usize> =
                    (0..c).filter(|&j| corr.adjacency[i * c + j] == 1).collect();
                let scores: Vec<f64> = neighbors
                    .iter()
                    .map(|&j| {
                        let s: f64 = (0..d).map(|q| t[i * d + q] * asrc[q]).sum();
                        let o: f64 = (0..d).map(|q| t[j * d + q] * adst[q]).sum();
                        leaky(s + o)
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for (idx, &j) in neighbors.iter().enumerate() {
                    let alpha = exps[idx] / denom;
                    for q in 0..d {
                        averaged[i * d + q] += alpha * t[j * d + q] / 2.0;
                    }
                }
            }
        }
        let ow = params.out_weight.values();
        for i in 0..c {
            let mut want = params.out_bias.values()[0];
            for q in 0..d {
                want += averaged[i * d + q] * ow[q];
            }
            assert!((logits.values()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_exactly_zero_outside_neighborhood() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let c = 3;
        let corr = LabelCorrelation {
            labels: c,
            tau: 0.4,
            p: vec![1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0],
            adjacency: vec![1, 0, 0, 1, 1, 0, 0, 0, 0], // label 3 isolated
        };
        let params = GatParams::init(2, 1, 0.2, &mut rng);
        let features = Tensor::new(&[c, 2], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let transformed = features.matmul(&params.transforms[0]).unwrap();
        let src = transformed.matmul(&params.attn_src[0]).unwrap();
        let dst = transformed.matmul(&params.attn_dst[0]).unwrap();
        let attention = src
            .matmul(&Tensor::full(&[1, c], 1.0))
            .unwrap()
            .add(&Tensor::full(&[c, 1], 1.0).matmul(&dst.transpose()).unwrap())
            .leaky_relu(0.2)
            .add(&Tensor::new(&[c, c], corr.mask_values()))
            .softmax_rows();
        let a = attention.values();
        assert_eq!(a[0 * c + 1], 0.0);
        assert_eq!(a[0 * c + 2], 0.0);
        assert_eq!(a[1 * c + 2], 0.0);
        // Isolated node falls back to its self-loop.
        assert_eq!(a[2 * c + 2], 1.0);
        for i in 0..c {
            let row_sum: f64 = a[i * c..i * c + c].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_through_gat() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let c = 3;
        let d = 3;
        let corr = LabelCorrelation {
            labels: c,
            tau: 0.4,
            p: vec![1.0; 9],
            adjacency: vec![1, 1, 0, 1, 1, 1, 0, 1, 1],
        };
        let params = GatParams::init(d, 2, 0.2, &mut rng);
        let features = Tensor::param(&[c, d], (0..c * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let tensors = vec![
            features,
            params.transforms[0].clone(),
            params.attn_src[1].clone(),
            params.attn_dst[0].clone(),
            params.out_weight.clone(),
            params.out_bias.clone(),
        ];
        let err = crate::tensor::grad_check(
            |p| {
                let mut gp = params.clone();
                gp.transforms[0] = p[1].clone();
                gp.attn_src[1] = p[2].clone();
                gp.attn_dst[0] = p[3].clone();
                gp.out_weight = p[4].clone();
                gp.out_bias = p[5].clone();
                let logits = gat_forward(&p[0], &corr, &gp)?;
                Ok(logits.mul(&logits).sum())
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "gat grad err {err}");
    }
}
