//! Binary checkpoint format.
//!
//! Layout: magic `GSSN`, format version (u32 LE), structural schema hash
//! (u64 LE), epoch (u32 LE), best validation metric (f64 LE bits), a
//! length-prefixed JSON metadata blob (full schema, model config, label
//! graph), then length-prefixed named tensors (parameters and optimizer
//! state) with u32 dims and 64-bit little-endian values. Tensor bytes are
//! written verbatim, so a save/load round trip is bit-exact.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSchema;
use crate::error::{Error, Result};
use crate::labelgraph::LabelCorrelation;
use crate::model::{GrassNet, ModelConfig};

const MAGIC: &[u8; 4] = b"GSSN";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    schema: DatasetSchema,
    model: ModelConfig,
    label_graph: LabelGraphBlob,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelGraphBlob {
    labels: usize,
    tau: f64,
    p: Vec<f64>,
    adjacency: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub schema: DatasetSchema,
    pub model_config: ModelConfig,
    pub corr: LabelCorrelation,
    pub epoch: u32,
    pub best_metric: f64,
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub opt_state: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn schema_hash(&self) -> u64 {
        self.schema.structural_hash()
    }

    /// Rebuild the model this checkpoint was saved from.
    pub fn build_model(&self) -> Result<GrassNet> {
        let mut model = GrassNet::new(&self.schema, self.model_config, self.corr.clone(), 0);
        model.load_named_params(&self.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.schema_hash().to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.best_metric.to_bits().to_le_bytes());

        let meta = serde_json::to_vec(&Metadata {
            schema: self.schema.clone(),
            model: self.model_config,
            label_graph: LabelGraphBlob {
                labels: self.corr.labels,
                tau: self.corr.tau,
                p: self.corr.p.clone(),
                adjacency: self.corr.adjacency.clone(),
            },
        })?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);

        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, shape, values) in &self.params {
            write_named_tensor(&mut out, name, shape, values);
        }
        out.extend_from_slice(&(self.opt_state.len() as u32).to_le_bytes());
        for (name, values) in &self.opt_state {
            write_named_tensor(&mut out, name, &[values.len()], values);
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path)?;
        let mut cur = Cursor::new(bytes.as_slice());
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = read_u32(&mut cur)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let stored_hash = read_u64(&mut cur)?;
        let epoch = read_u32(&mut cur)?;
        let best_metric = f64::from_bits(read_u64(&mut cur)?);

        let meta_len = read_u32(&mut cur)? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        cur.read_exact(&mut meta_bytes)
            .map_err(|_| Error::Checkpoint("truncated metadata".into()))?;
        let meta: Metadata = serde_json::from_slice(&meta_bytes)?;

        let param_count = read_u32(&mut cur)? as usize;
        let mut params = Vec::with_capacity(param_count);
        for _ in 0..param_count {
            params.push(read_named_tensor(&mut cur)?);
        }
        let state_count = read_u32(&mut cur)? as usize;
        let mut opt_state = Vec::with_capacity(state_count);
        for _ in 0..state_count {
            let (name, _, values) = read_named_tensor(&mut cur)?;
            opt_state.push((name, values));
        }

        let checkpoint = Checkpoint {
            corr: LabelCorrelation {
                labels: meta.label_graph.labels,
                tau: meta.label_graph.tau,
                p: meta.label_graph.p,
                adjacency: meta.label_graph.adjacency,
            },
            schema: meta.schema,
            model_config: meta.model,
            epoch,
            best_metric,
            params,
            opt_state,
        };
        if checkpoint.schema_hash() != stored_hash {
            return Err(Error::Checkpoint(
                "schema hash does not match embedded schema".into(),
            ));
        }
        Ok(checkpoint)
    }
}

fn write_named_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    let name_bytes = name.as_bytes();
    out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(name_bytes);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.write_all(&(values.len() as u64).to_le_bytes()).unwrap();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_named_tensor(cur: &mut Cursor<&[u8]>) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let name_len = read_u16(cur)? as usize;
    let mut name_bytes = vec![0u8; name_len];
    cur.read_exact(&mut name_bytes)
        .map_err(|_| Error::Checkpoint("truncated tensor name".into()))?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
    let ndim = read_u32(cur)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(cur)? as usize);
    }
    let len = read_u64(cur)? as usize;
    if shape.iter().product::<usize>() != len {
        return Err(Error::Checkpoint(format!(
            "tensor {name}: shape {shape:?} does not match {len} values"
        )));
    }
    let mut values = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        cur.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated values of {name}")))?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok((name, shape, values))
}

fn read_u16(cur: &mut Cursor<&[u8]>) -> Result<u16> {
    let mut buf = [0u8; 2];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated field".into()))?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut buf = [0u8; 4];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated field".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut buf = [0u8; 8];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated field".into()))?;
    Ok(u64::from_le_bytes(buf))
}
