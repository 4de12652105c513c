//! Path file formats: CSV with one column per component, and a
//! little-endian binary layout ("HFBM", u32 m, u64 n, f64 row-major).

use crate::dwt::WaveletPyramid;
use crate::synth::{MultiPath, PathError};
use std::io::{Read, Write};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"HFBM";
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error("binary: {0}")]
    Format(String),
    #[error(transparent)]
    Path(#[from] PathError),
}

impl From<csv::Error> for IoError {
    fn from(e: csv::Error) -> Self {
        IoError::Csv(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathFormat {
    Csv,
    Binary,
}

impl PathFormat {
    /// Guess from leading bytes: the binary magic or else CSV text.
    pub fn sniff(bytes: &[u8]) -> Self {
        if bytes.starts_with(MAGIC) {
            PathFormat::Binary
        } else {
            PathFormat::Csv
        }
    }
}

pub fn write_csv<W: Write>(path: &MultiPath, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..path.m).map(|q| format!("comp_{q}")))?;
    let mut rec = Vec::with_capacity(path.m);
    for t in 0..path.n {
        rec.clear();
        rec.extend((0..path.m).map(|q| format!("{:?}", path.row(q)[t])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads CSV with an optional header row; every data row must have the
/// same number of numeric fields.
pub fn read_csv<R: Read>(input: R) -> Result<MultiPath, IoError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        let vals = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(IoError::Csv(format!("line {}: {e}", line + 1))),
        };
        if cols.is_empty() {
            cols = vec![Vec::new(); vals.len()];
        }
        if vals.len() != cols.len() {
            return Err(IoError::Csv(format!("line {}: {} fields, expected {}", line + 1, vals.len(), cols.len())));
        }
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    Ok(MultiPath::from_rows(cols)?)
}

pub fn encode_binary(path: &MultiPath) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * path.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(path.m as u32).to_le_bytes());
    out.extend_from_slice(&(path.n as u64).to_le_bytes());
    for v in &path.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<MultiPath, IoError> {
    if bytes.len() < HEADER_LEN {
        return Err(IoError::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(IoError::Format("bad magic".into()));
    }
    let m = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let n = usize::try_from(n).map_err(|_| IoError::Format(format!("length {n} too large")))?;
    if m == 0 {
        return Err(IoError::Format("zero components".into()));
    }
    let expect = m
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| IoError::Format("size overflow".into()))?;
    if bytes.len() != expect {
        return Err(IoError::Format(format!("{} bytes, header implies {expect}", bytes.len())));
    }
    let rows = (0..m)
        .map(|q| {
            let base = HEADER_LEN + 8 * q * n;
            (0..n)
                .map(|t| f64::from_le_bytes(bytes[base + 8 * t..base + 8 * t + 8].try_into().expect("8 bytes")))
                .collect()
        })
        .collect();
    Ok(MultiPath::from_rows(rows)?)
}

/// Reads either format, deciding by the leading bytes.
pub fn read_path_bytes(bytes: &[u8]) -> Result<MultiPath, IoError> {
    match PathFormat::sniff(bytes) {
        PathFormat::Binary => decode_binary(bytes),
        PathFormat::Csv => read_csv(bytes),
    }
}

/// Debug dump of detail coefficients with columns (j, q, k, d).
pub fn write_pyramid_csv<W: Write>(pyr: &WaveletPyramid, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "q", "k", "d"])?;
    for o in &pyr.octaves {
        for (q, row) in o.coeffs.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                w.write_record([o.j.to_string(), q.to_string(), k.to_string(), format!("{v:?}")])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
