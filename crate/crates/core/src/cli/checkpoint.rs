//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! `"CDTR"`, `u32` version, `u64` length + config JSON, `u64` tensor count,
//! then per tensor in name order: `u32` name length, name bytes, `u32` rank,
//! `u64` dims, `f64` payload. A SHA-256 digest of every preceding byte ends
//! the file. Optimizer moments are stored as tensors named `adam.m.<param>`
//! and `adam.v.<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::ShapeKind;
use crate::model::{ModelConfig, Parameters};
use crate::numeric::Array;
use crate::training::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 4] = b"CDTR";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const MOMENT1_PREFIX: &str = "adam.m.";
const MOMENT2_PREFIX: &str = "adam.v.";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint digest mismatch")]
    Integrity,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    chart_kind: ShapeKind,
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
}

/// Everything needed to run inference or resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub chart_kind: ShapeKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            chart_kind: self.chart_kind,
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.state.step,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut tensors: BTreeMap<String, &Array> = self.state.params.iter().map(|(n, a)| (n.clone(), a)).collect();
        for (prefix, moments) in [(MOMENT1_PREFIX, &self.state.moment1), (MOMENT2_PREFIX, &self.state.moment2)] {
            tensors.extend(moments.iter().map(|(n, a)| (format!("{prefix}{n}"), a)));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, array) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(array.rank() as u32).to_le_bytes());
            for &d in array.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in array.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader { bytes, pos: 4 };
        let found = r.u32()?;
        if found != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion { found });
        }
        if bytes.len() < 8 + DIGEST_LEN {
            return Err(CheckpointError::Truncated);
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Integrity);
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let json_len = r.len()?;
        let header: Header =
            serde_json::from_slice(r.take(json_len)?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let count = r.len()?;
        let mut params = BTreeMap::new();
        let mut moment1 = BTreeMap::new();
        let mut moment2 = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(CheckpointError::Truncated)?;
            let payload = r.take(len.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let array = Array::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            let target = if let Some(rest) = name.strip_prefix(MOMENT1_PREFIX) {
                moment1.insert(rest.to_string(), array)
            } else if let Some(rest) = name.strip_prefix(MOMENT2_PREFIX) {
                moment2.insert(rest.to_string(), array)
            } else {
                params.insert(name.clone(), array)
            };
            if target.is_some() {
                return Err(CheckpointError::Malformed(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        let params = Parameters::from_map(params);
        params
            .check(&header.model)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        Ok(Self {
            chart_kind: header.chart_kind,
            model: header.model,
            train: header.train,
            state: TrainState {
                params,
                step: header.step,
                moment1,
                moment2,
            },
        })
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| CheckpointError::Truncated)
    }
}
