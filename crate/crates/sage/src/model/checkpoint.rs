//! Binary checkpoints.
//!
//! Layout (little-endian): magic `SAGC`, format version u16 = 1, tensor
//! count u32, then per tensor a name (length u16 + UTF-8 bytes), rank u8,
//! dims u32 each, and the f64 payload row-major. After the tensors comes
//! the model config as a u32-length-prefixed JSON blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dataio::write_atomic;
use crate::error::{Result, SageError};
use crate::numerics::Tensor;

use super::config::ModelConfig;
use super::params::SageParams;

const MAGIC: &[u8; 4] = b"SAGC";
const VERSION: u16 = 1;

/// Serializes config and parameters to `path` atomically (temp file in
/// the same directory, then rename).
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &SageParams) -> Result<()> {
    let bytes = checkpoint_bytes(cfg, params)?;
    write_atomic(path, &bytes)
}

fn checkpoint_bytes(cfg: &ModelConfig, params: &SageParams) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(16 + params.total_values() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        if name.len() > u16::MAX as usize {
            return Err(SageError::Config(format!("parameter name too long: {name}")));
        }
        bytes.extend_from_slice(&(name.len() as u16).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.push(tensor.rank() as u8);
        for &dim in tensor.shape() {
            bytes.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let config = serde_json::to_vec(cfg)
        .map_err(|e| SageError::Config(format!("config serialization failed: {e}")))?;
    bytes.extend_from_slice(&(config.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&config);
    Ok(bytes)
}

/// Reads a checkpoint written by [`save_checkpoint`]; structural defects
/// are reported with the byte offset where they were detected.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, SageParams)> {
    let bytes = fs::read(path)?;
    parse_checkpoint_bytes(&bytes)
}

fn fail(offset: usize, msg: String) -> SageError {
    SageError::Parse { offset: offset as u64, msg }
}

fn take<'a>(bytes: &'a [u8], cursor: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() - *cursor < n {
        return Err(fail(
            bytes.len(),
            format!("truncated while reading {what}: need {n} bytes at offset {cursor}"),
        ));
    }
    let slice = &bytes[*cursor..*cursor + n];
    *cursor += n;
    Ok(slice)
}

fn parse_checkpoint_bytes(bytes: &[u8]) -> Result<(ModelConfig, SageParams)> {
    let mut cursor = 0usize;
    let magic = take(bytes, &mut cursor, 4, "magic")?;
    if magic != MAGIC {
        return Err(fail(0, format!("bad magic {magic:?}, expected \"SAGC\"")));
    }
    let version_at = cursor;
    let version = u16::from_le_bytes(take(bytes, &mut cursor, 2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(fail(version_at, format!("unsupported checkpoint version {version}")));
    }
    let count =
        u32::from_le_bytes(take(bytes, &mut cursor, 4, "tensor count")?.try_into().unwrap()) as usize;

    let mut entries = BTreeMap::new();
    for i in 0..count {
        let name_at = cursor;
        let name_len =
            u16::from_le_bytes(take(bytes, &mut cursor, 2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(bytes, &mut cursor, name_len, "name")?)
            .map_err(|e| fail(name_at + 2, format!("name is not UTF-8: {e}")))?
            .to_string();
        let rank = take(bytes, &mut cursor, 1, "rank")?[0] as usize;
        if rank == 0 {
            return Err(fail(cursor - 1, format!("tensor \"{name}\" has rank 0")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let dim_at = cursor;
            let dim =
                u32::from_le_bytes(take(bytes, &mut cursor, 4, "dimension")?.try_into().unwrap())
                    as usize;
            if dim == 0 {
                return Err(fail(dim_at, format!("tensor \"{name}\" has a zero dimension")));
            }
            numel = numel
                .checked_mul(dim)
                .ok_or_else(|| fail(dim_at, format!("tensor \"{name}\" size overflows")))?;
            shape.push(dim);
        }
        let payload_at = cursor;
        let payload = take(bytes, &mut cursor, numel * 8, "payload")?;
        let mut data = Vec::with_capacity(numel);
        for (j, chunk) in payload.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if !v.is_finite() {
                return Err(fail(
                    payload_at + j * 8,
                    format!("non-finite value {v} in tensor \"{name}\""),
                ));
            }
            data.push(v);
        }
        if entries.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(fail(name_at, format!("duplicate tensor \"{name}\" (entry {i})")));
        }
    }

    let config_at = cursor;
    let config_len =
        u32::from_le_bytes(take(bytes, &mut cursor, 4, "config length")?.try_into().unwrap()) as usize;
    let config_bytes = take(bytes, &mut cursor, config_len, "config blob")?;
    if cursor != bytes.len() {
        return Err(fail(cursor, format!("{} trailing bytes", bytes.len() - cursor)));
    }
    let cfg: ModelConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| fail(config_at + 4, format!("config blob is not valid JSON: {e}")))?;

    let params = SageParams::from_entries(&cfg, entries)?;
    Ok((cfg, params))
}
