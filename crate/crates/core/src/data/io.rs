//! Binary dataset file and plain-text split file.
//!
//! Dataset layout (little-endian):
//!
//! ```text
//! "KSPC" | u32 version=1 | u32 n_records | u32 d_r | u32 d_c | f32 norm_constant
//! per record: u64 id | u8 label | d_r·d_c × (f32 re, f32 im), row-major
//! ```
//!
//! Split file: one line per record, `<id> <train|val|test>`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use super::{DataError, Dataset, DatasetSplit, Record, SplitName};
use crate::numerics::{ComplexTensor, Tensor};

pub const MAGIC: [u8; 4] = *b"KSPC";
pub const FORMAT_VERSION: u32 = 1;

/// Sidecar split file next to a dataset file: `<path>.split`.
pub fn split_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".split");
    PathBuf::from(s)
}

/// Writes the dataset file at `path` and its split file at [`split_path`].
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(ds.records.len() as u32).to_le_bytes())?;
    w.write_all(&(ds.d_r as u32).to_le_bytes())?;
    w.write_all(&(ds.d_c as u32).to_le_bytes())?;
    w.write_all(&ds.norm_constant.to_le_bytes())?;
    for rec in &ds.records {
        w.write_all(&rec.id.to_le_bytes())?;
        w.write_all(&[rec.label])?;
        for (re, im) in rec.kspace.re.data().iter().zip(rec.kspace.im.data()) {
            w.write_all(&re.to_le_bytes())?;
            w.write_all(&im.to_le_bytes())?;
        }
    }
    w.flush()?;
    write_split(&split_path(path), &ds.split)
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], err: impl FnOnce() -> DataError) -> Result<(), DataError> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => Err(err()),
        Err(e) => Err(e.into()),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, || DataError::TruncatedHeader)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a dataset file and its split file.
pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, || DataError::TruncatedHeader)?;
    if magic != MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(DataError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = read_u32(&mut r)? as usize;
    let d_r = read_u32(&mut r)? as usize;
    let d_c = read_u32(&mut r)? as usize;
    let mut nb = [0u8; 4];
    read_exact_or(&mut r, &mut nb, || DataError::TruncatedHeader)?;
    let norm_constant = f32::from_le_bytes(nb);

    let plane = d_r * d_c;
    let mut records = Vec::with_capacity(n);
    let mut payload = vec![0u8; plane * 8];
    for i in 0..n {
        let mut head = [0u8; 9];
        read_exact_or(&mut r, &mut head, || DataError::Truncated { record: i })?;
        read_exact_or(&mut r, &mut payload, || DataError::Truncated { record: i })?;
        let id = u64::from_le_bytes(head[..8].try_into().expect("8 bytes"));
        let label = head[8];
        let mut re = Vec::with_capacity(plane);
        let mut im = Vec::with_capacity(plane);
        for pair in payload.chunks_exact(8) {
            re.push(f32::from_le_bytes(pair[..4].try_into().expect("4 bytes")));
            im.push(f32::from_le_bytes(pair[4..].try_into().expect("4 bytes")));
        }
        records.push(Record {
            id,
            label,
            kspace: ComplexTensor::new(Tensor::new(vec![d_r, d_c], re)?, Tensor::new(vec![d_r, d_c], im)?)?,
            lesion_offset: None,
        });
    }
    let split = read_split(&split_path(path))?;
    Dataset::new(d_r, d_c, norm_constant, records, split)
}

pub fn write_split(path: &Path, split: &DatasetSplit) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for name in [SplitName::Train, SplitName::Val, SplitName::Test] {
        for id in split.ids(name) {
            writeln!(w, "{id} {}", name.as_str())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<DatasetSplit, DataError> {
    let r = BufReader::new(File::open(path)?);
    let mut split = DatasetSplit::default();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let bad = |reason: &str| DataError::BadSplit {
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let id: u64 = parts
            .next()
            .ok_or_else(|| bad("missing id"))?
            .parse()
            .map_err(|_| bad("id is not an integer"))?;
        let name: SplitName = parts
            .next()
            .ok_or_else(|| bad("missing split name"))?
            .parse()
            .map_err(|e: String| bad(&e))?;
        if parts.next().is_some() {
            return Err(bad("trailing fields"));
        }
        match name {
            SplitName::Train => split.train.push(id),
            SplitName::Val => split.val.push(id),
            SplitName::Test => split.test.push(id),
        }
    }
    Ok(split)
}
