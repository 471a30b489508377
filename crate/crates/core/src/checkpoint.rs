//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//! magic `DPICKPT\0` | u32 version | config text | seen protein keys |
//! seen drug keys | u64 tensor count | per tensor: name, u32 ndim,
//! u64 dims, f64 data. Strings are a u64 byte length plus UTF-8.

use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::DpiModel;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DPICKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: DpiModel,
    /// Sorted training-set keys, used for the seen/unseen breakdown.
    pub train_proteins: Vec<String>,
    pub train_drugs: Vec<String>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn put_list(out: &mut Vec<u8>, items: &[String]) {
    put_u64(out, items.len() as u64);
    for s in items {
        put_str(out, s);
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        put_list(&mut out, &self.train_proteins);
        put_list(&mut out, &self.train_drugs);
        put_u64(&mut out, self.model.store.len() as u64);
        for (_, p) in self.model.store.iter() {
            put_str(&mut out, &p.name);
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                put_u64(&mut out, d as u64);
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config = RunConfig::from_text(&r.string()?)?;
        let train_proteins = r.list()?;
        let train_drugs = r.list()?;
        let mut model = DpiModel::new(config.model.clone(), 0)?;
        let n = r.u64()? as usize;
        if n != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {n} tensors, configuration implies {}",
                model.store.len()
            )));
        }
        for p in model.store.params_mut() {
            let name = r.string()?;
            if name != p.name {
                return Err(Error::Checkpoint(format!("expected tensor {:?}, found {name:?}", p.name)));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {shape:?}, expected {:?}",
                    p.value.shape()
                )));
            }
            let count: usize = shape.iter().product();
            let raw = r.take(count * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            p.value = Tensor::new(shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            model,
            train_proteins,
            train_drugs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
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

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }

    fn list(&mut self) -> Result<Vec<String>> {
        let n = self.u64()? as usize;
        (0..n).map(|_| self.string()).collect()
    }
}
