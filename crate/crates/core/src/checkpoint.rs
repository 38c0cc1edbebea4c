//! Parameter checkpoint container.
//!
//! Layout: an 8-byte little-endian header length `H`, then `H` bytes of
//! UTF-8 JSON, then the payload of little-endian `f64` values. The header is
//!
//! ```json
//! {"metadata": {...}, "tensors": {"name": {"shape": [..], "offset": 0}, ...}}
//! ```
//!
//! where `offset` is the byte offset of the tensor inside the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    metadata: serde_json::Value,
    tensors: BTreeMap<String, Entry>,
}

/// Named tensors plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = BTreeMap::new();
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.insert(name.clone(), Entry { shape: t.shape().to_vec(), offset });
            offset += t.numel() * 8;
        }
        let header = serde_json::to_vec(&Header {
            metadata: self.metadata.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 {
            return Err(bad("file shorter than the header length prefix"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let payload_start = 8usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[8..payload_start])
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
        let payload = &bytes[payload_start..];
        let mut tensors = BTreeMap::new();
        for (name, e) in header.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset + n * 8;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("tensor `{name}` runs past end of payload")));
            }
            let data = payload[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.shape, data).map_err(|err| Error::Checkpoint(format!("`{name}`: {err}")))?;
            tensors.insert(name, t);
        }
        Ok(Checkpoint { metadata: header.metadata, tensors })
    }

    /// Writes atomically: a sibling temp file is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
