//! Feature matrix files.
//!
//! ```text
//! "GICF" | version: u8 | frames: u32 | dim: u32 | frames·dim × f32
//! ```
//!
//! Integers and floats are little-endian; data is row-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"GICF";
pub const FEATURE_VERSION: u8 = 1;
const HEADER_LEN: usize = 13;

/// Encodes a matrix. Values are stored as `f32`; the conversion is exact
/// for values that are already `f32`-representable.
pub fn encode_features(x: &Tensor) -> Result<Vec<u8>> {
    let (t, d) = (x.rows(), x.cols());
    let t32 = u32::try_from(t).map_err(|_| Error::TooLarge(format!("{t} frames")))?;
    let d32 = u32::try_from(d).map_err(|_| Error::TooLarge(format!("{d} feature dims")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * x.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.push(FEATURE_VERSION);
    out.extend_from_slice(&t32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for &v in x.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Tensor> {
    let bad = |d: String| Error::format("feature file", d);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    if bytes[4] != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let t = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    if t == 0 || d == 0 {
        return Err(bad(format!("empty {t}×{d} matrix")));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = t.checked_mul(d).and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(bad(format!(
            "header says {t}×{d} but {} data bytes follow",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    Ok(Tensor::matrix(t, d, data))
}

pub fn write_features(path: &Path, x: &Tensor) -> Result<()> {
    std::fs::write(path, encode_features(x)?).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            t in 1usize..20,
            d in 1usize..10,
            seed in prop::collection::vec(-1e6f32..1e6, 200),
        ) {
            let data: Vec<f64> = (0..t * d).map(|i| seed[i % seed.len()] as f64).collect();
            let x = Tensor::matrix(t, d, data);
            let bytes = encode_features(&x).unwrap();
            let back = decode_features(&bytes).unwrap();
            prop_assert_eq!(&back, &x);
            prop_assert_eq!(encode_features(&back).unwrap(), bytes);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_features(&bytes);
            let mut framed = b"GICF\x01".to_vec();
            framed.extend_from_slice(&bytes);
            let _ = decode_features(&framed);
        }
    }

    #[test]
    fn rejects_malformed() {
        let x = Tensor::matrix(2, 3, vec![1.0; 6]);
        let bytes = encode_features(&x).unwrap();
        assert!(decode_features(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 4]);
        assert!(decode_features(&long).is_err());
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(decode_features(&v).is_err());
        let mut nan = bytes;
        nan[13..17].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_features(&nan).is_err());
        let huge = [b'G', b'I', b'C', b'F', 1, 255, 255, 255, 255, 255, 255, 255, 255];
        assert!(decode_features(&huge).is_err());
    }
}
