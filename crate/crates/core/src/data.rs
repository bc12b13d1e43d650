//! Dataset schema and CSV ingestion.
//!
//! One CSV row per (sample, timestep). Header columns: `sample_id`,
//! `timestep`, then any number of `sensor_*`, `cat_*` and `label_*` columns.
//! Label cells are `0`, `1` or the literal `NA` for a missing label; a sample
//! whose labels are all `NA` is an unlabeled sample (pseudo-label pool).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LabeledBatchTargets;

/// Missing-label sentinel in label cells.
pub const MISSING_LABEL: &str = "NA";

/// Reserved token id for categories unseen at training time (lenient mode).
pub const UNKNOWN_TOKEN: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalField {
    pub name: String,
    /// Known categories in sorted order; ids are assigned per field on top
    /// of a shared vocabulary (id 0 is the unknown token).
    pub vocab: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub sensor_names: Vec<String>,
    pub max_steps: usize,
    pub categorical_fields: Vec<CategoricalField>,
    pub label_names: Vec<String>,
}

impl DatasetSchema {
    pub fn sensor_count(&self) -> usize {
        self.sensor_names.len()
    }

    pub fn label_count(&self) -> usize {
        self.label_names.len()
    }

    pub fn field_count(&self) -> usize {
        self.categorical_fields.len()
    }

    /// Total token-id space: one unknown token plus every field's vocabulary.
    pub fn vocab_total(&self) -> usize {
        1 + self
            .categorical_fields
            .iter()
            .map(|f| f.vocab.len())
            .sum::<usize>()
    }

    /// Global token id of a category value within a field, if known.
    pub fn token_id(&self, field: usize, value: &str) -> Option<usize> {
        let mut offset = 1;
        for (i, f) in self.categorical_fields.iter().enumerate() {
            if i == field {
                return f
                    .vocab
                    .iter()
                    .position(|v| v == value)
                    .map(|pos| offset + pos);
            }
            offset += f.vocab.len();
        }
        None
    }

    /// Hash of the structural part (column names, order, window length).
    /// Vocabularies are excluded so a validation file with unseen categories
    /// still matches the training structure.
    pub fn structural_hash(&self) -> u64 {
        // FNV-1a over a canonical rendering: stable across platforms.
        let mut text = String::new();
        text.push_str("sensors:");
        for s in &self.sensor_names {
            text.push_str(s);
            text.push(';');
        }
        text.push_str(&format!("steps:{};cats:", self.max_steps));
        for f in &self.categorical_fields {
            text.push_str(&f.name);
            text.push(';');
        }
        text.push_str("labels:");
        for l in &self.label_names {
            text.push_str(l);
            text.push(';');
        }
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in text.as_bytes() {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }
}

/// One loaded sample: padded series, categorical token ids, labels and the
/// observation mask.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    /// Row-major sensor-by-timestep values, already padded to
    /// `schema.max_steps`.
    pub series: Vec<f64>,
    pub tokens: Vec<usize>,
    pub labels: Vec<f64>,
    pub mask: Vec<f64>,
}

impl Sample {
    pub fn is_unlabeled(&self) -> bool {
        self.mask.iter().all(|&m| m == 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn labeled(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| !s.is_unlabeled()).collect()
    }

    pub fn unlabeled(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.is_unlabeled()).collect()
    }

    /// Targets over a slice of samples, in slice order.
    pub fn targets_for(samples: &[&Sample], labels: usize) -> LabeledBatchTargets {
        let mut y = Vec::with_capacity(samples.len() * labels);
        let mut mask = Vec::with_capacity(samples.len() * labels);
        for s in samples {
            y.extend_from_slice(&s.labels);
            mask.extend_from_slice(&s.mask);
        }
        LabeledBatchTargets::new(samples.len(), labels, y, mask)
    }
}

/// Front-pad a variable-length series with zeros to `t_max` steps (the final
/// recurrent state then reflects real data); longer series keep the most
/// recent `t_max` steps. `rows` is one Vec per sensor.
pub fn zero_pad(rows: &[Vec<f64>], t_max: usize) -> Result<Vec<f64>> {
    let t = rows.first().map(|r| r.len()).unwrap_or(0);
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = Vec::with_capacity(rows.len() * t_max);
    for row in rows {
        debug_assert_eq!(row.len(), t);
        if t >= t_max {
            out.extend_from_slice(&row[t - t_max..]);
        } else {
            out.extend(std::iter::repeat(0.0).take(t_max - t));
            out.extend_from_slice(row);
        }
    }
    Ok(out)
}

struct HeaderLayout {
    sample_id: usize,
    timestep: usize,
    sensors: Vec<(usize, String)>,
    cats: Vec<(usize, String)>,
    labels: Vec<(usize, String)>,
}

fn parse_header(header: &csv::StringRecord) -> Result<HeaderLayout> {
    let mut sample_id = None;
    let mut timestep = None;
    let mut sensors = Vec::new();
    let mut cats = Vec::new();
    let mut labels = Vec::new();
    for (idx, name) in header.iter().enumerate() {
        if name == "sample_id" {
            sample_id = Some(idx);
        } else if name == "timestep" {
            timestep = Some(idx);
        } else if let Some(rest) = name.strip_prefix("sensor_") {
            sensors.push((idx, rest.to_string()));
        } else if let Some(rest) = name.strip_prefix("cat_") {
            cats.push((idx, rest.to_string()));
        } else if let Some(rest) = name.strip_prefix("label_") {
            labels.push((idx, rest.to_string()));
        } else {
            return Err(Error::DataFormat {
                line: 1,
                message: format!(
                    "unrecognized column {name:?}; expected sample_id, timestep, sensor_*, cat_* or label_*"
                ),
            });
        }
    }
    let sample_id = sample_id.ok_or_else(|| Error::DataFormat {
        line: 1,
        message: "missing sample_id column".into(),
    })?;
    let timestep = timestep.ok_or_else(|| Error::DataFormat {
        line: 1,
        message: "missing timestep column".into(),
    })?;
    if sensors.is_empty() || labels.is_empty() {
        return Err(Error::DataFormat {
            line: 1,
            message: "need at least one sensor_* and one label_* column".into(),
        });
    }
    Ok(HeaderLayout {
        sample_id,
        timestep,
        sensors,
        cats,
        labels,
    })
}

struct RawRow {
    line: u64,
    timestep: i64,
    sensors: Vec<f64>,
    cats: Vec<String>,
    labels: Vec<Option<f64>>,
}

fn read_rows(path: &Path) -> Result<(HeaderLayout, Vec<(String, RawRow)>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let layout = parse_header(reader.headers()?)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or_default();
        let field = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::DataFormat {
                line,
                message: format!("missing column {idx}"),
            })
        };
        let id = field(layout.sample_id)?.to_string();
        let timestep: i64 = field(layout.timestep)?.parse().map_err(|_| Error::DataFormat {
            line,
            message: format!("bad timestep {:?}", field(layout.timestep).unwrap_or("")),
        })?;
        let mut sensors = Vec::with_capacity(layout.sensors.len());
        for (idx, name) in &layout.sensors {
            let raw = field(*idx)?;
            sensors.push(raw.parse().map_err(|_| Error::DataFormat {
                line,
                message: format!("bad sensor value {raw:?} in sensor_{name}"),
            })?);
        }
        let cats = layout
            .cats
            .iter()
            .map(|(idx, _)| field(*idx).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let mut labels = Vec::with_capacity(layout.labels.len());
        for (idx, name) in &layout.labels {
            let raw = field(*idx)?;
            labels.push(match raw {
                MISSING_LABEL => None,
                "0" => Some(0.0),
                "1" => Some(1.0),
                other => {
                    return Err(Error::DataFormat {
                        line,
                        message: format!("bad label value {other:?} in label_{name}"),
                    })
                }
            });
        }
        rows.push((
            id,
            RawRow {
                line,
                timestep,
                sensors,
                cats,
                labels,
            },
        ));
    }
    Ok((layout, rows))
}

// Group rows by sample id in first-appearance order, each group sorted by
// timestep.
fn group_rows(rows: Vec<(String, RawRow)>) -> Vec<(String, Vec<RawRow>)> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<RawRow>)> = Vec::new();
    for (id, row) in rows {
        match index.get(&id) {
            Some(&i) => groups[i].1.push(row),
            None => {
                index.insert(id.clone(), groups.len());
                groups.push((id, vec![row]));
            }
        }
    }
    for (_, group) in &mut groups {
        group.sort_by_key(|r| r.timestep);
    }
    groups
}

/// Infer a schema from a CSV file: structure from the header, categorical
/// vocabularies (sorted) and the padding window from the data.
pub fn infer_schema(path: &Path) -> Result<DatasetSchema> {
    let (layout, rows) = read_rows(path)?;
    let mut vocabs: Vec<Vec<String>> = vec![Vec::new(); layout.cats.len()];
    for (_, row) in &rows {
        for (f, value) in row.cats.iter().enumerate() {
            if !vocabs[f].contains(value) {
                vocabs[f].push(value.clone());
            }
        }
    }
    for v in &mut vocabs {
        v.sort();
    }
    let groups = group_rows(rows);
    let max_steps = groups.iter().map(|(_, g)| g.len()).max().unwrap_or(1).max(1);
    Ok(DatasetSchema {
        sensor_names: layout.sensors.iter().map(|(_, n)| n.clone()).collect(),
        max_steps,
        categorical_fields: layout
            .cats
            .iter()
            .zip(vocabs)
            .map(|((_, name), vocab)| CategoricalField {
                name: name.clone(),
                vocab,
            })
            .collect(),
        label_names: layout.labels.iter().map(|(_, n)| n.clone()).collect(),
    })
}

/// Load a CSV against a schema. In strict mode an unknown category is an
/// error; in lenient mode it maps to the reserved unknown token. Categorical
/// and label cells are taken from each sample's first timestep row.
pub fn load_dataset(path: &Path, schema: &DatasetSchema, lenient: bool) -> Result<Dataset> {
    let (layout, rows) = read_rows(path)?;
    let structural = DatasetSchema {
        sensor_names: layout.sensors.iter().map(|(_, n)| n.clone()).collect(),
        max_steps: schema.max_steps,
        categorical_fields: layout
            .cats
            .iter()
            .map(|(_, name)| CategoricalField {
                name: name.clone(),
                vocab: Vec::new(),
            })
            .collect(),
        label_names: layout.labels.iter().map(|(_, n)| n.clone()).collect(),
    };
    let expected = {
        let mut s = schema.clone();
        for f in &mut s.categorical_fields {
            f.vocab.clear();
        }
        s
    };
    if structural != expected {
        return Err(Error::SchemaMismatch {
            expected: schema.structural_hash(),
            actual: structural.structural_hash(),
        });
    }

    let groups = group_rows(rows);
    let mut samples = Vec::with_capacity(groups.len());
    for (id, group) in groups {
        let first = &group[0];
        let mut tokens = Vec::with_capacity(schema.field_count());
        for (f, value) in first.cats.iter().enumerate() {
            match schema.token_id(f, value) {
                Some(t) => tokens.push(t),
                None if lenient => tokens.push(UNKNOWN_TOKEN),
                None => {
                    return Err(Error::UnknownCategory {
                        field: schema.categorical_fields[f].name.clone(),
                        value: value.clone(),
                    })
                }
            }
        }
        let mut labels = Vec::with_capacity(schema.label_count());
        let mut mask = Vec::with_capacity(schema.label_count());
        for cell in &first.labels {
            match cell {
                Some(v) => {
                    labels.push(*v);
                    mask.push(1.0);
                }
                None => {
                    labels.push(0.0);
                    mask.push(0.0);
                }
            }
        }
        // Sensor rows: one per sensor, a value per timestep in order.
        let mut rows_per_sensor = vec![Vec::with_capacity(group.len()); schema.sensor_count()];
        for row in &group {
            if row.sensors.len() != schema.sensor_count() {
                return Err(Error::DataFormat {
                    line: row.line,
                    message: format!(
                        "{} sensor values, schema has {}",
                        row.sensors.len(),
                        schema.sensor_count()
                    ),
                });
            }
            for (s, v) in row.sensors.iter().enumerate() {
                rows_per_sensor[s].push(*v);
            }
        }
        let series = zero_pad(&rows_per_sensor, schema.max_steps)?;
        samples.push(Sample {
            id,
            series,
            tokens,
            labels,
            mask,
        });
    }
    Ok(Dataset {
        schema: schema.clone(),
        samples,
    })
}
