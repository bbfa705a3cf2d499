//! Versioned binary archive of named `f64` arrays plus string metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "LABARCH\0"
//! version   u32
//! hdr_len   u64
//! header    hdr_len bytes of JSON: {"metadata": {..}, "arrays": [{name, shape, dtype, offset, len}]}
//! payload   f64 values, concatenated in manifest order
//! checksum  32 bytes SHA-256 of everything above
//! ```
//!
//! Used for backbone weight files and training checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LABARCH\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not an archive (bad magic)")]
    BadMagic,
    #[error("archive format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corrupt archive: {0}")]
    Corrupt(String),
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: BTreeMap<String, String>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub metadata: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, t)| {
                let e = ArrayEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                    offset,
                    len: t.len(),
                };
                offset += t.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            metadata: self.metadata.clone(),
            arrays,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + offset * 8 + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        if bytes.len() < 20 + 32 {
            return Err(ArchiveError::Corrupt("truncated preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ArchiveError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ArchiveError::Corrupt("checksum mismatch".into()));
        }
        let hdr_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let payload_start = 20usize
            .checked_add(hdr_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| ArchiveError::Corrupt("header overruns file".into()))?;
        let header: Header = serde_json::from_slice(&body[20..payload_start])
            .map_err(|e| ArchiveError::Corrupt(format!("header: {e}")))?;
        let payload = &body[payload_start..];
        if payload.len() % 8 != 0 {
            return Err(ArchiveError::Corrupt("payload is not whole f64 values".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            if e.dtype != "f64" {
                return Err(ArchiveError::Corrupt(format!("{}: dtype {}", e.name, e.dtype)));
            }
            if e.shape.iter().product::<usize>() != e.len || e.offset + e.len > values.len() {
                return Err(ArchiveError::Corrupt(format!("{}: bad extent", e.name)));
            }
            let t = Tensor::new(e.shape, values[e.offset..e.offset + e.len].to_vec());
            arrays.push((e.name, t));
        }
        Ok(Archive {
            metadata: header.metadata,
            arrays,
        })
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        let io = |source| ArchiveError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        let bytes = fs::read(path).map_err(|source| ArchiveError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::new();
        a.metadata.insert("step".into(), "7".into());
        a.push("w", Tensor::new(vec![2, 2], vec![1.0, -2.5, f64::MIN_POSITIVE, 3.0e300]));
        a.push("b", Tensor::scalar(0.125));
        a
    }

    #[test]
    fn round_trip_is_bitwise() {
        let a = sample();
        assert_eq!(Archive::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() - 40, 30, 9] {
            assert!(Archive::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 50] ^= 1;
        assert!(matches!(Archive::from_bytes(&bytes), Err(ArchiveError::Corrupt(_))));
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            Archive::from_bytes(&bytes),
            Err(ArchiveError::Version { found: 9, .. })
        ));
    }
}
