//! Checkpoint container: named parameter tensors behind a JSON header.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset     | size | content                                   |
//! |------------|------|-------------------------------------------|
//! | 0          | 8    | magic `b"SAMSACK\x01"`                    |
//! | 8          | 8    | `u64` header length `H`                   |
//! | 16         | H    | UTF-8 JSON header ([`CheckpointHeader`])  |
//! | 16 + H     | ...  | tensor payloads, in header order          |
//!
//! Each payload is the row-major element data of one tensor, `numel` values
//! of the header's `dtype` (`f32` = 4 bytes, `f64` = 8 bytes), with no
//! padding between tensors. The file ends after the last payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{DType, Real};

use super::Array;

pub const MAGIC: &[u8; 8] = b"SAMSACK\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub dtype: DType,
    pub seed: u64,
    /// Free-form metadata; the model architecture lives here.
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode<T: Real>(
    seed: u64,
    meta: serde_json::Value,
    tensors: &[(&str, &Array<T>)],
) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: FORMAT_VERSION,
        dtype: T::DTYPE,
        seed,
        meta,
        tensors: tensors
            .iter()
            .map(|(n, a)| TensorEntry {
                name: n.to_string(),
                shape: a.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = tensors.iter().map(|(_, a)| a.numel()).sum::<usize>() * T::DTYPE.size_of();
    let mut out = Vec::with_capacity(16 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, a) in tensors {
        for &v in a.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.format != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {}",
            header.format
        )));
    }
    Ok((header, &bytes[16 + len..]))
}

/// Parameter arrays keyed by name, in store order.
pub type NamedArrays<T> = Vec<(String, Array<T>)>;

/// Decodes into element type `T`, converting from the stored dtype if needed.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(CheckpointHeader, NamedArrays<T>)> {
    let (header, mut payload) = split_header(bytes)?;
    let size = header.dtype.size_of();
    let mut out = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let need = numel * size;
        if payload.len() < need {
            return Err(Error::Checkpoint(format!(
                "truncated payload for {}",
                entry.name
            )));
        }
        let (chunk, rest) = payload.split_at(need);
        payload = rest;
        let data: Vec<T> = match header.dtype {
            DType::F32 => chunk
                .chunks(4)
                .map(|c| T::of(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => chunk.chunks(8).map(|c| T::of(f64::read_le(c))).collect(),
        };
        out.push((entry.name.clone(), Array::new(entry.shape.clone(), data)?));
    }
    if !payload.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            payload.len()
        )));
    }
    Ok((header, out))
}

pub fn save<T: Real>(
    path: &Path,
    seed: u64,
    meta: serde_json::Value,
    tensors: &[(&str, &Array<T>)],
) -> Result<()> {
    fs::write(path, encode(seed, meta, tensors)?)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<(CheckpointHeader, NamedArrays<T>)> {
    decode(&fs::read(path)?)
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(split_header(&fs::read(path)?)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_documented_one() {
        let a = Array::<f32>::vector(vec![1.5, -2.0]);
        let bytes = encode(9, serde_json::json!({"k": 4}), &[("w", &a)]).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + h + 8);
        assert_eq!(&bytes[16 + h..16 + h + 4], &1.5f32.to_le_bytes());
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + h]).unwrap();
        assert_eq!(header["dtype"], "f32");
        assert_eq!(header["seed"], 9);
        assert_eq!(header["tensors"][0]["shape"], serde_json::json!([2]));
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode::<f32>(b"not a checkpoint at all").is_err());
        let a = Array::<f64>::vector(vec![1.0]);
        let mut bytes = encode(0, serde_json::Value::Null, &[("a", &a)]).unwrap();
        bytes.pop();
        assert!(decode::<f64>(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 0..40), seed in any::<u64>()) {
            let a = Array::vector(values.clone());
            let b = Array::<f64>::from_fn(&[2, 3], |i| i as f64 * 0.5);
            let bytes = encode(seed, serde_json::json!({"x": 1}), &[("a", &a), ("b", &b)]).unwrap();
            let (header, back) = decode::<f64>(&bytes).unwrap();
            prop_assert_eq!(header.seed, seed);
            prop_assert_eq!(&back[0].1, &a);
            prop_assert_eq!(&back[1].1, &b);
        }
    }
}
