//! Binary checkpoints.
//!
//! Layout (little-endian): `"PRCK"`, u32 version, u32 config length, config
//! as JSON, u64 parameter count, f32 parameters, then the FNV-1a 64-bit hash
//! of every preceding byte.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(self.config()).expect("config serializes");
        let mut out = Vec::with_capacity(28 + config.len() + 4 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.param_count() as u64).to_le_bytes());
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Model, String> {
        let take = |at: usize, n: usize| {
            bytes
                .get(at..at + n)
                .ok_or_else(|| format!("truncated at byte {at}"))
        };
        if bytes.len() < 8 {
            return Err("truncated header".into());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if take(0, 4)? != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(take(4, 4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        if fnv1a64(body) != stored {
            return Err("checksum mismatch".into());
        }
        let clen = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes")) as usize;
        let config: ModelConfig =
            serde_json::from_slice(take(12, clen)?).map_err(|e| format!("config: {e}"))?;
        let at = 12 + clen;
        let count = u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes")) as usize;
        let raw = &body[at + 8..];
        if raw.len() != count.saturating_mul(4) {
            return Err(format!(
                "expected {count} parameters, found {} bytes",
                raw.len()
            ));
        }
        let params = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Model::from_parts(config, params).map_err(|e| e.to_string())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Model::from_bytes(&bytes).map_err(|message| Error::Format {
        kind: "checkpoint",
        path: path.to_path_buf(),
        message,
    })
}
