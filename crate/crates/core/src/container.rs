//! Binary container shared by checkpoints and language models.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GICK" | version: u32 | header_len: u32 | header (UTF-8 JSON) | tensor data (f64)
//! ```
//!
//! The header holds the container `kind`, free-form `meta`, and the name
//! and shape of each tensor in storage order. Tensor data follows as
//! row-major `f64` values with no padding.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GICK";
pub const VERSION: u32 = 1;
/// Headers larger than this are rejected before allocation.
pub const MAX_HEADER_BYTES: usize = 64 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    meta: Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::format("container header", e.to_string()))?;
        let header_len = u32::try_from(json.len())
            .map_err(|_| Error::TooLarge("container header exceeds 4 GiB".into()))?;
        let data_len: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(12 + json.len() + 8 * data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("container", d);
        if bytes.len() < 12 {
            return Err(bad(format!("{} bytes is shorter than the fixed header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if header_len > MAX_HEADER_BYTES || header_len > bytes.len() - 12 {
            return Err(bad(format!("header length {header_len} exceeds the file")));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| bad(format!("header: {e}")))?;
        let mut rest = &bytes[12 + header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len().min(4096));
        for e in header.tensors {
            let n = e
                .rows
                .checked_mul(e.cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= rest.len()))
                .ok_or_else(|| bad(format!("tensor {:?} runs past the end of the data", e.name)))?;
            let (chunk, tail) = rest.split_at(n * 8);
            let data = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name, Tensor::matrix(e.rows, e.cols, data)));
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    /// Checks the container kind.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(
                "container",
                format!("expected a {kind} file, found {:?}", self.kind),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use serde_json::json;

    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("test", json!({"b": [1, 2], "a": 0.1}));
        c.tensors.push(("w".into(), Tensor::matrix(2, 3, vec![1.0, -0.0, 1e-300, f64::MAX, 0.5, -7.25])));
        c.tensors.push(("empty".into(), Tensor::matrix(0, 4, vec![])));
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.tensor("w").unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.meta, c.meta);
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 11, 12, 20, bytes.len() - 1] {
            assert!(Container::from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Container::from_bytes(&magic).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(Container::from_bytes(&version).is_err());
        assert!(sample().expect_kind("other").is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = Container::from_bytes(&bytes);
            let mut framed = b"GICK\x01\x00\x00\x00".to_vec();
            framed.extend_from_slice(&bytes);
            let _ = Container::from_bytes(&framed);
        }
    }
}
