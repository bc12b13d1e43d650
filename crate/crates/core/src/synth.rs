//! Synthetic dataset generation with planted label rules.
//!
//! Each label is a linear threshold over two pooled sensor statistics: the
//! global level (sum over sensors of the time mean) and the global trend
//! (sum over sensors of last-minus-first). Label c thresholds the mixture
//! `cos(theta_c)*level + sin(theta_c)*trend`; the angles put labels 1 and 2
//! on the pure trend and pure level axes, which are exactly independent, so
//! any co-occurrence between them exists only when a rule injects it.
//! Thresholds come from empirical quantiles of the generated pool, so the
//! positive rate is hit exactly. Everything is a pure function of the seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CategoricalField, Dataset, DatasetSchema, Sample, MISSING_LABEL};
use crate::error::Result;

/// Forced co-occurrence: when label `src` is positive, label `dst` is set
/// positive with probability `prob`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoOccurrenceRule {
    pub src: usize,
    pub dst: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sensors: usize,
    pub steps: usize,
    pub labels: usize,
    pub samples: usize,
    #[serde(default = "default_valid_samples")]
    pub valid_samples: usize,
    #[serde(default)]
    pub unlabeled_fraction: f64,
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
    #[serde(default)]
    pub co_occurrence: Option<CoOccurrenceRule>,
    pub seed: u64,
}

fn default_valid_samples() -> usize {
    64
}

fn default_positive_rate() -> f64 {
    0.2
}

pub struct SynthPaths {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub schema: PathBuf,
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// Mixing angle of label c over the (level, trend) statistic plane. Labels 1
// and 2 sit on the pure axes; the rest fan out in 45-degree steps.
fn label_angle(c: usize) -> f64 {
    use std::f64::consts::FRAC_PI_4;
    match c % 4 {
        0 => FRAC_PI_4,
        1 => 0.0,
        2 => 2.0 * FRAC_PI_4,
        _ => 3.0 * FRAC_PI_4,
    }
}

// (level, trend) pooled statistics of one series.
fn pooled_stats(series: &[f64], sensors: usize, steps: usize) -> (f64, f64) {
    let mut level = 0.0;
    let mut trend = 0.0;
    for s in 0..sensors {
        let row = &series[s * steps..(s + 1) * steps];
        level += row.iter().sum::<f64>() / steps as f64;
        trend += row[steps - 1] - row[0];
    }
    let scale = (sensors as f64).sqrt();
    if steps == 1 {
        // Single-step windows have no trend; fall back to the level so every
        // label still varies.
        (level / scale, level / scale)
    } else {
        (level / scale, trend / scale)
    }
}

const STAGE_VOCAB: [&str; 4] = ["stg_a", "stg_b", "stg_c", "stg_d"];
const TOOL_VOCAB: [&str; 4] = ["tool_1", "tool_2", "tool_3", "tool_4"];

pub fn synth_schema(spec: &SynthSpec) -> DatasetSchema {
    DatasetSchema {
        sensor_names: (0..spec.sensors).map(|i| format!("s{i:02}")).collect(),
        max_steps: spec.steps,
        categorical_fields: vec![
            CategoricalField {
                name: "stage".into(),
                vocab: STAGE_VOCAB.iter().map(|s| s.to_string()).collect(),
            },
            CategoricalField {
                name: "tool".into(),
                vocab: TOOL_VOCAB.iter().map(|s| s.to_string()).collect(),
            },
        ],
        label_names: (0..spec.labels).map(|i| format!("l{i}")).collect(),
    }
}

struct RawSample {
    series: Vec<f64>, // sensors-by-steps row-major
    stage: usize,
    tool: usize,
    labels: Vec<bool>,
    unlabeled: bool,
}

fn generate_raw(spec: &SynthSpec) -> Vec<RawSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.samples + spec.valid_samples;

    let mut series_pool = Vec::with_capacity(total);
    let mut stats = vec![Vec::with_capacity(total); spec.labels];
    for _ in 0..total {
        let series: Vec<f64> = (0..spec.sensors * spec.steps)
            .map(|_| standard_normal(&mut rng))
            .collect();
        let (level, trend) = pooled_stats(&series, spec.sensors, spec.steps);
        for c in 0..spec.labels {
            let angle = label_angle(c);
            stats[c].push(angle.cos() * level + angle.sin() * trend);
        }
        series_pool.push(series);
    }

    // Empirical (1 - rate) quantile per label over the whole pool.
    let thresholds: Vec<f64> = stats
        .iter()
        .map(|column| {
            let mut sorted = column.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cut = ((1.0 - spec.positive_rate) * total as f64).floor() as usize;
            sorted[cut.min(total - 1)]
        })
        .collect();

    let mut out = Vec::with_capacity(total);
    for (idx, series) in series_pool.into_iter().enumerate() {
        let mut labels: Vec<bool> = (0..spec.labels)
            .map(|c| stats[c][idx] > thresholds[c])
            .collect();
        if let Some(rule) = &spec.co_occurrence {
            if labels[rule.src] && rng.gen_bool(rule.prob) {
                labels[rule.dst] = true;
            }
        }
        let stage = rng.gen_range(0..STAGE_VOCAB.len());
        let tool = rng.gen_range(0..TOOL_VOCAB.len());
        let unlabeled = spec.unlabeled_fraction > 0.0 && rng.gen_bool(spec.unlabeled_fraction);
        out.push(RawSample {
            series,
            stage,
            tool,
            labels,
            unlabeled,
        });
    }
    out
}

fn to_samples(raw: &[RawSample], schema: &DatasetSchema, id_offset: usize) -> Vec<Sample> {
    raw.iter()
        .enumerate()
        .map(|(i, r)| {
            let (labels, mask) = if r.unlabeled {
                (vec![0.0; r.labels.len()], vec![0.0; r.labels.len()])
            } else {
                (
                    r.labels.iter().map(|&b| f64::from(b)).collect(),
                    vec![1.0; r.labels.len()],
                )
            };
            Sample {
                id: format!("s{:06}", id_offset + i),
                series: r.series.clone(),
                tokens: vec![
                    schema.token_id(0, STAGE_VOCAB[r.stage]).unwrap(),
                    schema.token_id(1, TOOL_VOCAB[r.tool]).unwrap(),
                ],
                labels,
                mask,
            }
        })
        .collect()
}

/// Generate the train/valid datasets in memory.
pub fn gen_synthetic_datasets(spec: &SynthSpec) -> (Dataset, Dataset) {
    let schema = synth_schema(spec);
    let raw = generate_raw(spec);
    let train = to_samples(&raw[..spec.samples], &schema, 0);
    let valid = to_samples(&raw[spec.samples..], &schema, spec.samples);
    (
        Dataset {
            schema: schema.clone(),
            samples: train,
        },
        Dataset {
            schema,
            samples: valid,
        },
    )
}

fn write_csv(path: &Path, schema: &DatasetSchema, samples: &[Sample], raw: &[RawSample]) -> Result<()> {
    let mut text = String::from("sample_id,timestep");
    for s in &schema.sensor_names {
        text.push_str(&format!(",sensor_{s}"));
    }
    for f in &schema.categorical_fields {
        text.push_str(&format!(",cat_{}", f.name));
    }
    for l in &schema.label_names {
        text.push_str(&format!(",label_{l}"));
    }
    text.push('\n');
    for (sample, r) in samples.iter().zip(raw) {
        for t in 0..schema.max_steps {
            text.push_str(&sample.id);
            text.push_str(&format!(",{t}"));
            for s in 0..schema.sensor_count() {
                text.push_str(&format!(",{}", sample.series[s * schema.max_steps + t]));
            }
            text.push_str(&format!(",{},{}", STAGE_VOCAB[r.stage], TOOL_VOCAB[r.tool]));
            for c in 0..schema.label_count() {
                if sample.mask[c] == 0.0 {
                    text.push_str(&format!(",{MISSING_LABEL}"));
                } else {
                    text.push_str(&format!(",{}", sample.labels[c] as i64));
                }
            }
            text.push('\n');
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Generate train.csv, valid.csv and schema.json under `out_dir`.
pub fn gen_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<SynthPaths> {
    fs::create_dir_all(out_dir)?;
    let schema = synth_schema(spec);
    let raw = generate_raw(spec);
    let train = to_samples(&raw[..spec.samples], &schema, 0);
    let valid = to_samples(&raw[spec.samples..], &schema, spec.samples);

    let paths = SynthPaths {
        train: out_dir.join("train.csv"),
        valid: out_dir.join("valid.csv"),
        schema: out_dir.join("schema.json"),
    };
    write_csv(&paths.train, &schema, &train, &raw[..spec.samples])?;
    write_csv(&paths.valid, &schema, &valid, &raw[spec.samples..])?;
    fs::write(&paths.schema, serde_json::to_string_pretty(&schema)?)?;
    Ok(paths)
}

#[cfg(test)]
#[allow(clippy::identity_op)]
mod tests {
    use super::*;
    use crate::data::{infer_schema, load_dataset};
    use crate::labelgraph::{build_cooccurrence, threshold_correlation};

    fn spec() -> SynthSpec {
        SynthSpec {
            sensors: 8,
            steps: 2,
            labels: 4,
            samples: 200,
            valid_samples: 40,
            unlabeled_fraction: 0.0,
            positive_rate: 0.2,
            co_occurrence: None,
            seed: 42,
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        gen_synthetic(&spec(), d1.path()).unwrap();
        gen_synthetic(&spec(), d2.path()).unwrap();
        for name in ["train.csv", "valid.csv", "schema.json"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs across runs");
        }
    }

    #[test]
    fn zero_unlabeled_fraction_means_all_masks_observed() {
        let (train, valid) = gen_synthetic_datasets(&spec());
        for s in train.samples.iter().chain(&valid.samples) {
            assert!(s.mask.iter().all(|&m| m == 1.0));
        }
    }

    #[test]
    fn unlabeled_fraction_produces_pseudo_label_pool() {
        let mut sp = spec();
        sp.unlabeled_fraction = 0.8;
        let (train, _) = gen_synthetic_datasets(&sp);
        let unlabeled = train.samples.iter().filter(|s| s.is_unlabeled()).count();
        let fraction = unlabeled as f64 / train.samples.len() as f64;
        assert!((fraction - 0.8).abs() < 0.1, "fraction {fraction}");
    }

    #[test]
    fn positive_rate_is_hit_closely() {
        let (train, valid) = gen_synthetic_datasets(&spec());
        let total = (train.samples.len() + valid.samples.len()) as f64;
        for c in 0..4 {
            let positives: usize = train
                .samples
                .iter()
                .chain(&valid.samples)
                .filter(|s| s.labels[c] != 0.0)
                .count();
            let rate = positives as f64 / total;
            assert!((rate - 0.2).abs() < 0.02, "label {c} rate {rate}");
        }
    }

    #[test]
    fn planted_cooccurrence_is_recovered_by_counting() {
        let mut sp = spec();
        sp.samples = 5000;
        sp.valid_samples = 0;
        sp.co_occurrence = Some(CoOccurrenceRule {
            src: 1,
            dst: 2,
            prob: 0.9,
        });
        let (train, _) = gen_synthetic_datasets(&sp);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = train
            .samples
            .iter()
            .map(|s| (s.labels.clone(), s.mask.clone()))
            .collect();
        let co = build_cooccurrence(pairs.iter().map(|(y, m)| (y.as_slice(), m.as_slice())), 4);
        let corr = threshold_correlation(&co, 0.4);
        let p_dst_given_src = corr.p[1 * 4 + 2];
        // Injection at 0.9 plus the 0.2 base rate on the remainder.
        assert!(
            (p_dst_given_src - 0.92).abs() < 0.05,
            "p(l2|l1) = {p_dst_given_src}"
        );
        assert_eq!(corr.adjacency[1 * 4 + 2], 1);
    }

    #[test]
    fn generated_files_load_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let sp = spec();
        let paths = gen_synthetic(&sp, dir.path()).unwrap();
        let (train_mem, _) = gen_synthetic_datasets(&sp);

        let schema = infer_schema(&paths.train).unwrap();
        assert_eq!(schema, synth_schema(&sp));
        let train = load_dataset(&paths.train, &schema, false).unwrap();
        assert_eq!(train.samples.len(), train_mem.samples.len());
        for (a, b) in train.samples.iter().zip(&train_mem.samples) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.series, b.series, "series of {} round-trips", a.id);
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.mask, b.mask);
        }
    }
}
