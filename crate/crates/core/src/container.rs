//! Shared on-disk framing for models, datasets and explanation archives.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u64           header length in bytes (n)
//! [u8; n]       UTF-8 JSON header, carrying a "magic" field
//! [u8; ...]     raw payload
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const LEN_BYTES: usize = 8;

pub fn encode<H: Serialize>(header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(LEN_BYTES + json.len() + payload.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Splits a container into its parsed header, the payload and the payload's byte offset.
pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, &[u8], u64)> {
    if bytes.len() < LEN_BYTES {
        return Err(Error::format(0, "file shorter than the 8-byte header length"));
    }
    let n = u64::from_le_bytes(bytes[..LEN_BYTES].try_into().expect("8 bytes")) as usize;
    let end = LEN_BYTES
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(LEN_BYTES as u64, format!("header length {n} exceeds file size")))?;
    let header = serde_json::from_slice(&bytes[LEN_BYTES..end])
        .map_err(|e| Error::format(LEN_BYTES as u64, format!("invalid JSON header: {e}")))?;
    Ok((header, &bytes[end..], end as u64))
}

pub fn check_magic(found: &str, expected: &str, offset: u64) -> Result<()> {
    if found != expected {
        return Err(Error::format(
            offset,
            format!("magic mismatch: expected {expected:?}, found {found:?}"),
        ));
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn f64s_to_le(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

/// Decodes `expected` little-endian f64 values, failing on any length mismatch.
pub fn le_to_f64s(payload: &[u8], expected: usize, offset: u64) -> Result<Vec<f64>> {
    if payload.len() != expected * 8 {
        return Err(Error::format(
            offset,
            format!(
                "payload length mismatch: expected {} bytes, found {}",
                expected * 8,
                payload.len()
            ),
        ));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, serde::Serialize, serde::Deserialize)]
    struct Header {
        magic: String,
        n: usize,
    }

    #[test]
    fn round_trip() {
        let h = Header { magic: "TEST".into(), n: 2 };
        let bytes = encode(&h, &f64s_to_le([1.5, -2.0])).unwrap();
        let (back, payload, offset): (Header, _, _) = decode(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(offset as usize, bytes.len() - 16);
        assert_eq!(le_to_f64s(payload, 2, offset).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(decode::<Header>(&[0; 4]).is_err());
        let mut bytes = (1000u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        assert!(decode::<Header>(&bytes).is_err());
        assert!(le_to_f64s(&[0; 15], 2, 0).is_err());
        assert!(check_magic("XTM1", "XDS1", 8).is_err());
    }
}
