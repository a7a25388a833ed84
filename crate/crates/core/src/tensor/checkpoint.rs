//! Parameter checkpoints: a versioned binary blob.
//!
//! Layout (all integers little-endian):
//! magic `RLCK` | u32 version | u32 param count | per param:
//! u32 name length | UTF-8 name | u32 ndim | u32 dims... | f64 values...

use super::Param;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"RLCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {0}", .version)]
    BadVersion { path: String, version: u32 },
    #[error("{path}: checkpoint is truncated or corrupt: {message}")]
    Corrupt { path: String, message: String },
    #[error("checkpoint parameter {name:?} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("checkpoint is missing parameter {0:?}")]
    Missing(String),
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source }
}

pub fn save_checkpoint(path: &Path, params: &[(&str, &Param)]) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, param) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(param.shape.len() as u32).to_le_bytes());
        for &d in &param.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &param.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&out).map_err(|e| io_err(path, e))
}

/// Load all named parameter blocks from a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    let p = path.display().to_string();
    let corrupt = |message: &str| CheckpointError::Corrupt { path: p.clone(), message: message.into() };

    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
        if at + n > bytes.len() {
            return Err(CheckpointError::Corrupt {
                path: path.display().to_string(),
                message: format!("need {n} bytes at offset {at}"),
            });
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };

    let magic = take(4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: p });
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::BadVersion { path: p, version });
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());

    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| corrupt("parameter name is not UTF-8"))?;
        let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if ndim > 4 {
            return Err(corrupt("more than 4 dimensions"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(n * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, shape, values));
    }
    Ok(entries)
}
