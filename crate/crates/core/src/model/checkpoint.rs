//! Binary checkpoint layout:
//!
//! ```text
//! magic "SCDCKPT\0" | u64 LE header length | JSON header | f64 LE tensor data
//! ```
//!
//! The header's `checksum` is the SHA-256 of the header serialized with an
//! empty checksum, followed by the data bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnswererCheckpoint, Arch, Dims, ModelError, Provenance, Tensor, TrainHyper};
use crate::Scalar;

pub const FORMAT_VERSION: u64 = 1;
const MAGIC: &[u8; 8] = b"SCDCKPT\0";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the data section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u64,
    arch: Arch,
    dims: Dims,
    provenance: Provenance,
    hyper: Option<TrainHyper>,
    final_loss: Option<f64>,
    tensors: Vec<TensorEntry>,
    checksum: String,
}

fn checksum(header: &Header, data: &[u8]) -> String {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut h = Sha256::new();
    h.update(&json);
    h.update(data);
    hex::encode(h.finalize())
}

/// Serializes a checkpoint to bytes.
pub fn checkpoint_bytes<T: Scalar>(ckpt: &AnswererCheckpoint<T>) -> Result<Vec<u8>, ModelError> {
    ckpt.validate()?;
    let mut data = Vec::with_capacity(ckpt.param_count() * 8);
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    let mut offset = 0;
    for t in &ckpt.tensors {
        entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset });
        offset += t.numel();
        for v in &t.data {
            data.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let mut header = Header {
        format_version: FORMAT_VERSION,
        arch: ckpt.arch,
        dims: ckpt.dims,
        provenance: ckpt.provenance.clone(),
        hyper: ckpt.hyper.clone(),
        final_loss: ckpt.final_loss,
        tensors: entries,
        checksum: String::new(),
    };
    header.checksum = checksum(&header, &data);
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

/// Writes atomically through a sibling temporary file. Returns the SHA-256
/// of the written bytes.
pub fn save_checkpoint<T: Scalar>(ckpt: &AnswererCheckpoint<T>, path: &Path) -> Result<String, ModelError> {
    let bytes = checkpoint_bytes(ckpt)?;
    let io = |e: std::io::Error| ModelError::Io { path: path.display().to_string(), message: e.to_string() };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(crate::util::sha256_hex(&bytes))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<AnswererCheckpoint<T>, ModelError> {
    let bytes =
        fs::read(path).map_err(|e| ModelError::Io { path: path.display().to_string(), message: e.to_string() })?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes<T: Scalar>(bytes: &[u8]) -> Result<AnswererCheckpoint<T>, ModelError> {
    let integrity = |m: &str| ModelError::Integrity(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(integrity("missing checkpoint magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| integrity("truncated header"))?;
    let raw = &bytes[16..end];
    let value: serde_json::Value =
        serde_json::from_slice(raw).map_err(|e| ModelError::Integrity(format!("header is not JSON: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| integrity("header lacks format_version"))?;
    if found != FORMAT_VERSION {
        return Err(ModelError::Version { found, expected: FORMAT_VERSION });
    }
    let mut header: Header =
        serde_json::from_value(value).map_err(|e| ModelError::Integrity(format!("malformed header: {e}")))?;
    let data = &bytes[end..];
    let stored = std::mem::take(&mut header.checksum);
    if checksum(&header, data) != stored {
        return Err(integrity("checksum mismatch (truncated or corrupted file)"));
    }
    if data.len() % 8 != 0 {
        return Err(integrity("data section is not a whole number of f64 values"));
    }
    let values: Vec<f64> =
        data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| ModelError::Integrity(format!("tensor {} exceeds data section", e.name)))?;
        tensors.push(Tensor { name: e.name, shape: e.shape, data: slice.iter().map(|&v| T::from_f64_lossy(v)).collect() });
    }
    let ckpt = AnswererCheckpoint {
        arch: header.arch,
        dims: header.dims,
        tensors,
        provenance: header.provenance,
        hyper: header.hyper,
        final_loss: header.final_loss,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_answerer;

    fn model() -> AnswererCheckpoint<f64> {
        let dims = Dims { buckets: 64, ngram: 3, embed_dim: 4, hidden: 5, image_dim: 3, answers: 2 };
        let mut m = init_answerer::<f64>(Arch::Dual, dims, 11).unwrap();
        m.hyper = Some(TrainHyper::default());
        m.final_loss = Some(0.25);
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let bytes = checkpoint_bytes(&m).unwrap();
        let back: AnswererCheckpoint<f64> = load_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn header_floats_survive_reparse() {
        let mut m = model();
        let mut x = 0.1f64;
        for _ in 0..500 {
            x = (x * 3.7 + 0.123_456_789).fract() + 1e-3;
            m.final_loss = Some(x);
            m.hyper.as_mut().unwrap().learning_rate = x / 7.0;
            let back: AnswererCheckpoint<f64> = load_checkpoint_bytes(&checkpoint_bytes(&m).unwrap()).unwrap();
            assert_eq!(back.final_loss.unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn f32_round_trip() {
        let m = init_answerer::<f32>(Arch::Cross, model().dims, 3).unwrap();
        let back: AnswererCheckpoint<f32> = load_checkpoint_bytes(&checkpoint_bytes(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/m.ckpt");
        let m = model();
        let hash = save_checkpoint(&m, &p).unwrap();
        assert_eq!(hash, crate::util::sha256_hex(&fs::read(&p).unwrap()));
        assert_eq!(load_checkpoint::<f64>(&p).unwrap(), m);
        assert!(matches!(load_checkpoint::<f64>(&dir.path().join("none")), Err(ModelError::Io { .. })));
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let bytes = checkpoint_bytes(&model()).unwrap();
        for cut in [4, 20, bytes.len() - 1] {
            assert!(matches!(load_checkpoint_bytes::<f64>(&bytes[..cut]), Err(ModelError::Integrity(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x40;
        assert!(matches!(load_checkpoint_bytes::<f64>(&flipped), Err(ModelError::Integrity(_))));
    }

    #[test]
    fn version_mismatch_detected_first() {
        let bytes = checkpoint_bytes(&model()).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        header["format_version"] = serde_json::json!(FORMAT_VERSION + 1);
        header["unexpected"] = serde_json::json!(true);
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[16 + len..]);
        match load_checkpoint_bytes::<f64>(&out) {
            Err(ModelError::Version { found, expected }) => {
                assert_eq!(found, FORMAT_VERSION + 1);
                assert_eq!(expected, FORMAT_VERSION);
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
