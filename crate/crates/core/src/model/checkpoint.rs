//! `SACC0001` container: magic, little-endian `u64` header length, JSON header,
//! then little-endian `f32` tensor payloads at the offsets listed in the header.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 8] = b"SACC0001";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the payload section.
    offset: u64,
    /// Number of `f32` values.
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
    tensors: Vec<ManifestEntry>,
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub config: serde_json::Value,
    pub extra: Option<serde_json::Value>,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len() as u64,
            });
            offset += 4 * t.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            extra: self.extra.clone(),
            tensors: entries,
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
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
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing SACC0001 magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
        if hlen > body.len() {
            return Err(bad("header length exceeds file size"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload = &body[hlen..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let start = e.offset as usize;
            let end = start
                .checked_add(4 * e.len as usize)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| bad(&format!("tensor {} runs past end of file", e.name)))?;
            if e.shape.iter().product::<usize>() != e.len as usize {
                return Err(bad(&format!("tensor {} shape/length disagree", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(e.name, Tensor::new(e.shape, data));
        }
        Ok(Container {
            config: header.config,
            extra: header.extra,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "a".into(),
            Tensor::new(vec![2, 2], vec![1.5, -0.0, f32::MIN_POSITIVE, 3e-39]),
        );
        tensors.insert("b".into(), Tensor::vector(vec![7.25]));
        let c = Container {
            config: serde_json::json!({"k": 1}),
            extra: Some(serde_json::json!([1, 2])),
            tensors,
        };
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, c.config);
        assert_eq!(back.extra, c.extra);
        for (k, t) in &c.tensors {
            let u = &back.tensors[k];
            assert_eq!(t.shape(), u.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t), bits(u));
        }
    }

    #[test]
    fn rejects_corruption() {
        assert!(Container::from_bytes(b"NOTMAGIC00000000").is_err());
        let c = Container {
            config: serde_json::Value::Null,
            extra: None,
            tensors: [("w".to_string(), Tensor::vector(vec![1.0f32; 4]))].into(),
        };
        let bytes = c.to_bytes().unwrap();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
