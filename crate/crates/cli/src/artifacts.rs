//! Files written into run directories: checkpoints, JSON documents and the
//! reproducibility manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sidda_core::train::Checkpoint;

use crate::error::{CliError, Result};

const CKPT_MAGIC: &[u8; 4] = b"SDCK";
const CKPT_VERSION: u8 = 1;

/// Checkpoint file: magic `SDCK`, version byte, 3 reserved bytes, `u32`
/// metadata length, metadata JSON, `u64` state length, then the state as
/// little-endian `f32`.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(ckpt)?;
    let mut out = Vec::with_capacity(20 + meta.len() + 4 * ckpt.state.len());
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&[CKPT_VERSION, 0, 0, 0]);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(ckpt.state.len() as u64).to_le_bytes());
    for v in &ckpt.state {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |message: String| CliError::Format { path: path.to_path_buf(), message };
    let take = |at: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(at..at + n)
            .ok_or_else(|| bad(format!("truncated at byte {at}: need {n} more bytes, file has {}", bytes.len())))
    };
    if take(0, 4)? != CKPT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = take(4, 1)?[0];
    if version != CKPT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = u32::from_le_bytes(take(8, 4)?.try_into().unwrap()) as usize;
    let mut ckpt: Checkpoint = serde_json::from_slice(take(12, meta_len)?)
        .map_err(|e| bad(format!("metadata: {e}")))?;
    let at = 12 + meta_len;
    let count = u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize;
    let raw = take(at + 8, count.checked_mul(4).ok_or_else(|| bad("state length overflows".into()))?)?;
    if bytes.len() != at + 8 + 4 * count {
        return Err(bad(format!("{} trailing bytes", bytes.len() - at - 8 - 4 * count)));
    }
    ckpt.state = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(ckpt)
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_bytes(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to redo a run from its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    /// Name of the config copy inside the run directory.
    pub config: String,
    pub seeds: Vec<u64>,
    pub files: Vec<FileHash>,
}
