//! PRFV feature files: `"PRFV"`, u32 version, u32 T, u32 D, then T·D
//! little-endian f32 values in row-major order.

use std::fs;
use std::path::Path;

use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const PRFV_MAGIC: &[u8; 4] = b"PRFV";
pub const PRFV_VERSION: u32 = 1;

const HEADER: usize = 16;

fn malformed(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        kind: "feature",
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Reads a feature file. The video id is the file stem.
pub fn read_prfv(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER || &bytes[..4] != PRFV_MAGIC {
        return Err(malformed(path, "missing PRFV header"));
    }
    let version = u32_at(&bytes, 4);
    if version != PRFV_VERSION {
        return Err(malformed(path, format!("unsupported version {version}")));
    }
    let t = u32_at(&bytes, 8) as usize;
    let d = u32_at(&bytes, 12) as usize;
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| malformed(path, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(malformed(
            path,
            format!(
                "expected {expected} bytes for {t}x{d}, found {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::new(id, Tensor::matrix(t, d, data))
}

/// Writes `seq` to `path` (conventionally `<video_id>.prfv`).
pub fn write_prfv(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    let frames = seq.frames();
    let mut bytes = Vec::with_capacity(HEADER + frames.numel() * 4);
    bytes.extend_from_slice(PRFV_MAGIC);
    bytes.extend_from_slice(&PRFV_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    for v in frames.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
