use std::collections::BTreeMap;
use std::path::Path;

use nncore::Tensor;
use serde::{Deserialize, Serialize};

use super::config::ModelSpec;
use super::net::Model;
use super::{ModelError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDLK";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub best_epoch: usize,
    pub dev_metric: Option<f64>,
    /// Effective run configuration.
    pub config: BTreeMap<String, String>,
    pub notes: BTreeMap<String, String>,
}

/// Serialized model: spec, named tensors and training metadata.
///
/// Layout: `MDLK`, u32 version, u64-length-prefixed JSON spec, u32 tensor
/// count, then per tensor a u32-length name, a dtype byte, a u32 rank, u64
/// dims and the little-endian payload, and finally a u64-length-prefixed
/// JSON metadata block.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub tensors: Vec<(String, Tensor)>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn from_model(model: &Model, meta: TrainingMeta) -> Self {
        Self {
            spec: model.spec.clone(),
            tensors: model.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            meta,
        }
    }

    /// Rebuilds the model and loads every tensor by name.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::build(self.spec.clone(), 0)?;
        if model.store.len() != self.tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                model.store.len()
            )));
        }
        for (name, t) in &self.tensors {
            model.store.set(name, t.clone())?;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        write_block(&mut out, &serde_json::to_vec(&self.spec)?);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_block(&mut out, &serde_json::to_vec(&self.meta)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("missing MDLK magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let spec: ModelSpec = serde_json::from_slice(r.block()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = match dtype {
                DTYPE_F64 => r
                    .take(8 * n)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                DTYPE_F32 => r
                    .take(4 * n)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                other => return Err(ModelError::Checkpoint(format!("unknown dtype tag {other}"))),
            };
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let meta: TrainingMeta = serde_json::from_slice(r.block()?)?;
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { spec, tensors, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_block(out: &mut Vec<u8>, block: &[u8]) {
    out.extend_from_slice(&(block.len() as u64).to_le_bytes());
    out.extend_from_slice(block);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self) -> Result<&'a [u8]> {
        let len = self.u64()? as usize;
        self.take(len)
    }
}
