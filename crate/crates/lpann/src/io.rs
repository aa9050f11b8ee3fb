//! File formats: the binary dataset container, the truth CSV, and report
//! writers.
//!
//! Dataset container (version 1, little-endian):
//!
//! ```text
//! magic    4 bytes "AEAN"
//! version  u8 = 1
//! n        u32
//! d        u32
//! p_exp    f64
//! payload  n * d * f64, row-major
//! ```
//!
//! Queries use the same container; their `p_exp` must match the index.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::eval::TruthEntry;
use crate::metric::{Dataset, MetricError};
use crate::scalar::Scalar;

const MAGIC: [u8; 4] = *b"AEAN";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected AEAN, found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("non-finite value at payload index {0}")]
    NonFiniteValue(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(&'static str),
    #[error("invalid dataset: {0}")]
    InvalidDataset(#[from] MetricError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid truth row {row}: {reason}")]
    InvalidTruthRow { row: usize, reason: String },
}

/// Writes a dataset to the binary container format.
pub fn write_dataset<S: Scalar>(ds: &Dataset<S>, path: &Path) -> Result<(), FormatError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&[VERSION])?;
    out.write_all(&(ds.len() as u32).to_le_bytes())?;
    out.write_all(&(ds.dim() as u32).to_le_bytes())?;
    out.write_all(&ds.p_exp().to_report().to_le_bytes())?;
    for &v in ds.as_flat() {
        out.write_all(&v.to_report().to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset from the binary container format.
pub fn read_dataset<S: Scalar>(path: &Path) -> Result<Dataset<S>, FormatError> {
    let mut inp = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)
        .map_err(|_| FormatError::InvalidHeader("file shorter than the magic"))?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let mut v = [0u8; 1];
    inp.read_exact(&mut v)
        .map_err(|_| FormatError::InvalidHeader("missing version byte"))?;
    if v[0] != VERSION {
        return Err(FormatError::UnsupportedVersion(v[0]));
    }
    let mut b4 = [0u8; 4];
    inp.read_exact(&mut b4)
        .map_err(|_| FormatError::InvalidHeader("missing point count"))?;
    let n = u32::from_le_bytes(b4) as usize;
    inp.read_exact(&mut b4)
        .map_err(|_| FormatError::InvalidHeader("missing dimension"))?;
    let d = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    inp.read_exact(&mut b8)
        .map_err(|_| FormatError::InvalidHeader("missing exponent"))?;
    let p_exp = f64::from_le_bytes(b8);
    if n == 0 || d == 0 {
        return Err(FormatError::InvalidHeader("n and d must be >= 1"));
    }

    let expected = n * d * 8;
    let mut payload = Vec::with_capacity(expected);
    inp.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let mut flat = Vec::with_capacity(n * d);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFiniteValue(i));
        }
        flat.push(S::from_config(v));
    }
    Ok(Dataset::from_flat(flat, n, d, S::from_config(p_exp))?)
}

/// Writes the truth CSV: `query_id,nn_id,distance`.
pub fn write_truth(truth: &[TruthEntry], path: &Path) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query_id", "nn_id", "distance"])?;
    for t in truth {
        w.write_record([
            t.query_id.to_string(),
            t.neighbor_id.to_string(),
            format!("{:.17e}", t.distance),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the truth CSV back, validating ranges.
pub fn read_truth(path: &Path, n_queries: usize, n_points: usize) -> Result<Vec<TruthEntry>, FormatError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |idx: usize| -> Result<&str, FormatError> {
            rec.get(idx).ok_or(FormatError::InvalidTruthRow {
                row: i,
                reason: "missing column".into(),
            })
        };
        let query_id: u32 = parse(0)?.parse().map_err(|e| FormatError::InvalidTruthRow {
            row: i,
            reason: format!("query_id: {e}"),
        })?;
        let neighbor_id: u32 = parse(1)?.parse().map_err(|e| FormatError::InvalidTruthRow {
            row: i,
            reason: format!("nn_id: {e}"),
        })?;
        let distance: f64 = parse(2)?.parse().map_err(|e| FormatError::InvalidTruthRow {
            row: i,
            reason: format!("distance: {e}"),
        })?;
        if (query_id as usize) >= n_queries {
            return Err(FormatError::InvalidTruthRow {
                row: i,
                reason: format!("query_id {query_id} out of range (< {n_queries})"),
            });
        }
        if (neighbor_id as usize) >= n_points {
            return Err(FormatError::InvalidTruthRow {
                row: i,
                reason: format!("nn_id {neighbor_id} out of range (< {n_points})"),
            });
        }
        if !(distance >= 0.0) {
            return Err(FormatError::InvalidTruthRow {
                row: i,
                reason: format!("distance {distance} must be >= 0"),
            });
        }
        out.push(TruthEntry {
            query_id,
            neighbor_id,
            distance,
        });
    }
    Ok(out)
}
