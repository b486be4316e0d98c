//! Binary tensor container shared by weight files and activation dumps.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "PLK1"
//! version u32                     (currently 1)
//! flag    u8                      1 if a ModelConfig follows
//! config  7 × u32                 vocab, hidden, layers, heads, mlp_multiple,
//!                                 max_seq_len, positional tag
//! count   u32
//! table   count × { name_len u32, name utf-8, ndim u32, dims ndim × u64,
//!                   offset u64 (in elements from payload start) }
//! payload f64 values
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::config::{ModelConfig, PositionalScheme};
use super::weights::ModelWeights;
use super::Model;
use crate::error::ModelError;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PLK1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorContainer {
    pub config: Option<ModelConfig>,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl TensorContainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        match &self.config {
            Some(c) => {
                out.push(1);
                for v in [c.vocab_size, c.hidden, c.layers, c.heads, c.mlp_multiple, c.max_seq_len] {
                    out.extend_from_slice(&(v as u32).to_le_bytes());
                }
                out.extend_from_slice(&c.positional.tag().to_le_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += t.len() as u64;
        }
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Format(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let config = match r.take(1)?[0] {
            0 => None,
            1 => {
                let mut v = [0usize; 6];
                for slot in &mut v {
                    *slot = r.u32()? as usize;
                }
                let tag = r.u32()?;
                let positional = PositionalScheme::from_tag(tag)
                    .ok_or_else(|| ModelError::Format(format!("unknown positional tag {tag}")))?;
                let cfg = ModelConfig {
                    vocab_size: v[0],
                    hidden: v[1],
                    layers: v[2],
                    heads: v[3],
                    mlp_multiple: v[4],
                    max_seq_len: v[5],
                    positional,
                };
                cfg.validate()?;
                Some(cfg)
            }
            f => return Err(ModelError::Format(format!("bad config flag {f}"))),
        };
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| ModelError::Format("tensor name is not utf-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let offset = r.u64()? as usize;
            table.push((name, shape, offset));
        }
        let payload = &bytes[r.pos..];
        let mut tensors = Vec::with_capacity(table.len());
        for (name, shape, offset) in table {
            let n: usize = shape.iter().product();
            let start = offset
                .checked_mul(8)
                .ok_or_else(|| ModelError::Format("offset overflow".into()))?;
            let end = start + n * 8;
            if end > payload.len() {
                return Err(ModelError::Format(format!("truncated payload for {name}")));
            }
            let data: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Format("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl<T: Real> Model<T> {
    pub fn to_container(&self) -> TensorContainer {
        TensorContainer {
            config: Some(self.config.clone()),
            tensors: self
                .weights
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.cast()))
                .collect(),
        }
    }

    pub fn from_container(c: TensorContainer) -> Result<Self, ModelError> {
        let cfg = c
            .config
            .ok_or_else(|| ModelError::Format("container has no model config".into()))?;
        let named: HashMap<String, Tensor<T>> = c.tensors.into_iter().map(|(n, t)| (n, t.cast())).collect();
        let weights = ModelWeights::from_named(&cfg, named)?;
        Ok(Self { config: cfg, weights })
    }

    pub fn save_weights(&self, path: &Path) -> Result<(), ModelError> {
        self.to_container().save(path)
    }

    pub fn load_weights(path: &Path) -> Result<Self, ModelError> {
        Self::from_container(TensorContainer::load(path)?)
    }
}
