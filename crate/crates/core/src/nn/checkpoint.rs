//! Checkpoint container.
//!
//! Layout: the magic line `pcehr-ckpt-v1\n`, one line of JSON metadata (dtype, config
//! echo, normalization statistics, parameter names and shapes), then every parameter's
//! values as flat little-endian floats in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &str = "pcehr-ckpt-v1";

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    seed: u64,
    config: Value,
    normalization: Value,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

/// A parameter store together with the metadata needed to rebuild the model.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: Value,
    pub normalization: Value,
    pub params: ParameterStore<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            dtype: T::DTYPE.to_string(),
            seed: self.params.seed(),
            config: self.config.clone(),
            normalization: self.normalization.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&header)?.as_bytes());
        out.push(b'\n');
        for (_, t) in self.params.iter() {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |d: &str| Error::format(origin, d.to_string());
        let magic_end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
        if &bytes[..magic_end] != CHECKPOINT_MAGIC.as_bytes() {
            return Err(bad("not a pcehr-ckpt-v1 checkpoint"));
        }
        let rest = &bytes[magic_end + 1..];
        let json_end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated metadata"))?;
        let header: Header = serde_json::from_slice(&rest[..json_end])?;
        if header.dtype != T::DTYPE {
            return Err(bad(&format!("checkpoint holds {} values, expected {}", header.dtype, T::DTYPE)));
        }
        let mut payload = &rest[json_end + 1..];
        let mut params = ParameterStore::new(header.seed);
        for entry in header.params {
            let n: usize = entry.shape.iter().product();
            let need = n * T::BYTES;
            if payload.len() < need {
                return Err(bad(&format!("truncated values for {}", entry.name)));
            }
            let data = payload[..need].chunks_exact(T::BYTES).map(T::read_le).collect();
            payload = &payload[need..];
            params.insert(&entry.name, Tensor::new(entry.shape, data)?)?;
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after parameter values"));
        }
        Ok(Checkpoint {
            config: header.config,
            normalization: header.normalization,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
