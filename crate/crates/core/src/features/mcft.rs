//! MCFT binary layout (all little-endian):
//!
//! ```text
//! "MCFT" | u32 version = 1 | u32 count | u32 dim
//! count x ( u64 mask_id | dim x f32 )
//! ```

use std::fs;
use std::path::Path;

use super::table::FeatureTable;
use crate::scalar::Scalar;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MCFT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
/// Norm drift accepted (and corrected) on import.
const IMPORT_TOLERANCE: f64 = 1e-3;

pub fn write_features<T: Scalar>(table: &FeatureTable<T>) -> Vec<u8> {
    let dim = table.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + table.len() * (8 + 4 * dim));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for (id, v) in table.iter() {
        out.extend_from_slice(&id.to_le_bytes());
        for &x in v {
            out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_features<T: Scalar>(bytes: &[u8]) -> Result<FeatureTable<T>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format("MCFT file", "missing MCFT header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::format(
            "MCFT file",
            format!("unsupported version {version}"),
        ));
    }
    let count = word(8) as usize;
    let dim = word(12) as usize;
    let body = &bytes[HEADER_LEN..];
    let record = 8 + 4 * dim;
    if body.len() != count * record {
        if count > 0
            && body.len().is_multiple_of(count)
            && (body.len() / count).saturating_sub(8).is_multiple_of(4)
        {
            return Err(Error::DimMismatch {
                expected: dim,
                got: (body.len() / count - 8) / 4,
            });
        }
        return Err(Error::format(
            "MCFT file",
            format!(
                "{} payload bytes for {count} records of dim {dim}",
                body.len()
            ),
        ));
    }
    let mut table = FeatureTable::new(dim);
    for rec in body.chunks_exact(record) {
        let id = u64::from_le_bytes(rec[..8].try_into().expect("8 bytes"));
        let v: Vec<T> = rec[8..]
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        table.insert_renormalizing(id, v, IMPORT_TOLERANCE)?;
    }
    Ok(table)
}

pub fn export_features<T: Scalar>(table: &FeatureTable<T>, path: &Path) -> Result<()> {
    fs::write(path, write_features(table))?;
    Ok(())
}

pub fn import_features<T: Scalar>(path: &Path) -> Result<FeatureTable<T>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    read_features(&bytes)
}
