//! Versioned parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic[4] | u32 version | u64 config hash | u32 len | config JSON
//! u8 dtype (4 or 8) | u32 n_params
//! per param: u32 len | name | u32 ndim | ndim × u64 extent | values
//! ```
//!
//! The config hash is the first eight bytes of the SHA-256 of the JSON blob
//! and is checked on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{NumericsError, ParamSet, Real, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("config hash mismatch: header {header:016x}, payload {payload:016x}")]
    HashMismatch { header: u64, payload: u64 },
    #[error("checkpoint stores {found}-byte values, expected {expected}")]
    DtypeMismatch { found: u8, expected: u8 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == ErrorKind::UnexpectedEof {
            CheckpointError::Truncated
        } else {
            CheckpointError::Io(e)
        }
    }
}

pub fn config_hash(config_json: &str) -> u64 {
    let digest = Sha256::digest(config_json.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn write_checkpoint<T: Real>(path: &Path, magic: [u8; 4], config_json: &str, params: &ParamSet<T>) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&magic)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&config_hash(config_json).to_le_bytes())?;
    w.write_all(&(config_json.len() as u32).to_le_bytes())?;
    w.write_all(config_json.as_bytes())?;
    w.write_all(&[T::DTYPE])?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            if T::DTYPE == 4 {
                w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
            } else {
                w.write_all(&v.to_f64().to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String, CheckpointError> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

/// Returns the stored config JSON and parameters.
pub fn read_checkpoint<T: Real>(path: &Path, magic: [u8; 4]) -> Result<(String, ParamSet<T>), CheckpointError> {
    let mut r = BufReader::new(File::open(path).map_err(CheckpointError::Io)?);
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if m != magic {
        return Err(CheckpointError::BadMagic { found: m, expected: magic });
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }
    let header = read_u64(&mut r)?;
    let config = read_string(&mut r)?;
    let payload = config_hash(&config);
    if header != payload {
        return Err(CheckpointError::HashMismatch { header, payload });
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    if dtype[0] != T::DTYPE {
        return Err(CheckpointError::DtypeMismatch {
            found: dtype[0],
            expected: T::DTYPE,
        });
    }
    let n = read_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..n {
        let name = read_string(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            if T::DTYPE == 4 {
                data.push(T::from_f64(f32::from_bits(read_u32(&mut r)?) as f64));
            } else {
                data.push(T::from_f64(f64::from_bits(read_u64(&mut r)?)));
            }
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok((config, params))
}
