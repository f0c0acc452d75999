//! Binary matrix formats.
//!
//! Both formats share a 20-byte header:
//!
//! ```text
//! offset  size  field
//!      0     8  magic
//!      8     4  rows (u32 LE)         vocab_size for fingerprints
//!     12     4  cols (u32 LE)         hidden_size for fingerprints
//!     16     1  dtype (0 = f32, 1 = f64)
//!     17     3  reserved, must be zero
//!     20     -  row-major payload, little-endian
//! ```
//!
//! `LLMFP/1` fingerprint files use magic `LLMFP\0\x01\0` and end with a 16-byte
//! checksum: the first 16 bytes of the SHA-256 digest of the payload bytes.
//! Raw matrix files (input to fingerprint export) use magic `LLMRAW\0\x01` and
//! carry no checksum.
//!
//! Payloads stored as f32 are widened to f64 on load.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fingerprint::{Fingerprint, FingerprintError};

pub const FINGERPRINT_MAGIC: [u8; 8] = *b"LLMFP\x00\x01\x00";
pub const RAW_MAGIC: [u8; 8] = *b"LLMRAW\x00\x01";
pub const HEADER_LEN: usize = 20;
pub const CHECKSUM_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad header at byte offset {offset}: {reason}")]
    Header { offset: usize, reason: String },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("payload checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// First 16 bytes of SHA-256 over `payload`.
pub fn payload_checksum(payload: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(payload);
    let mut out = [0u8; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

pub fn encode_values(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.width());
    match dtype {
        Dtype::F32 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

/// Decodes a little-endian payload; `bytes.len()` must be a multiple of the width.
pub fn decode_values(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    }
}

/// A dense matrix as read from a raw matrix file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
    /// Row-major, widened to f64.
    pub values: Vec<f64>,
}

struct Header {
    rows: usize,
    cols: usize,
    dtype: Dtype,
}

fn header_bytes(
    magic: &[u8; 8],
    rows: usize,
    cols: usize,
    dtype: Dtype,
) -> Result<Vec<u8>, FormatError> {
    let dim = |n: usize, offset: usize| {
        u32::try_from(n).map_err(|_| FormatError::Header {
            offset,
            reason: format!("dimension {n} does not fit in u32"),
        })
    };
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&dim(rows, 8)?.to_le_bytes());
    out.extend_from_slice(&dim(cols, 12)?.to_le_bytes());
    out.push(dtype.tag());
    out.extend_from_slice(&[0u8; 3]);
    Ok(out)
}

fn parse_header(bytes: &[u8], magic: &[u8; 8]) -> Result<Header, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if let Some(offset) = (0..8).find(|&i| bytes[i] != magic[i]) {
        return Err(FormatError::Header {
            offset,
            reason: format!(
                "magic mismatch, expected {:?}",
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let dtype = Dtype::from_tag(bytes[16]).ok_or_else(|| FormatError::Header {
        offset: 16,
        reason: format!("unknown dtype tag {}", bytes[16]),
    })?;
    if let Some(i) = (17..20).find(|&i| bytes[i] != 0) {
        return Err(FormatError::Header {
            offset: i,
            reason: "reserved byte is not zero".into(),
        });
    }
    Ok(Header { rows, cols, dtype })
}

pub fn encode_fingerprint(fp: &Fingerprint, dtype: Dtype) -> Result<Vec<u8>, FormatError> {
    let mut out = header_bytes(&FINGERPRINT_MAGIC, fp.vocab_size(), fp.hidden_size(), dtype)?;
    let payload = encode_values(&fp.to_row_major(), dtype);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&payload_checksum(&payload));
    Ok(out)
}

/// Parses an `LLMFP/1` image. The format carries no model id, so the caller supplies one.
pub fn decode_fingerprint(
    bytes: &[u8],
    model_id: &str,
) -> Result<(Fingerprint, Dtype), FormatError> {
    let header = parse_header(bytes, &FINGERPRINT_MAGIC)?;
    let payload_len = header
        .rows
        .checked_mul(header.cols)
        .and_then(|n| n.checked_mul(header.dtype.width()))
        .ok_or_else(|| FormatError::Header {
            offset: 8,
            reason: "dimensions overflow".into(),
        })?;
    let expected = HEADER_LEN + payload_len + CHECKSUM_LEN;
    if bytes.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    if payload_checksum(payload)[..] != bytes[HEADER_LEN + payload_len..] {
        return Err(FormatError::Checksum);
    }
    let values = decode_values(payload, header.dtype);
    let fp = Fingerprint::from_row_major(model_id, header.rows, header.cols, &values)?;
    Ok((fp, header.dtype))
}

pub fn save_fingerprint(path: &Path, fp: &Fingerprint, dtype: Dtype) -> Result<(), FormatError> {
    let bytes = encode_fingerprint(fp, dtype)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

/// Loads an `LLMFP/1` file; the model id is the file stem.
pub fn load_fingerprint(path: &Path) -> Result<(Fingerprint, Dtype), FormatError> {
    let bytes = fs::read(path)?;
    let model_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_fingerprint(&bytes, &model_id)
}

pub fn encode_raw_matrix(m: &RawMatrix) -> Result<Vec<u8>, FormatError> {
    let mut out = header_bytes(&RAW_MAGIC, m.rows, m.cols, m.dtype)?;
    out.extend_from_slice(&encode_values(&m.values, m.dtype));
    Ok(out)
}

pub fn decode_raw_matrix(bytes: &[u8]) -> Result<RawMatrix, FormatError> {
    let header = parse_header(bytes, &RAW_MAGIC)?;
    let payload_len = header
        .rows
        .checked_mul(header.cols)
        .and_then(|n| n.checked_mul(header.dtype.width()))
        .ok_or_else(|| FormatError::Header {
            offset: 8,
            reason: "dimensions overflow".into(),
        })?;
    let expected = HEADER_LEN + payload_len;
    if bytes.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(RawMatrix {
        rows: header.rows,
        cols: header.cols,
        dtype: header.dtype,
        values: decode_values(&bytes[HEADER_LEN..], header.dtype),
    })
}

pub fn save_raw_matrix(path: &Path, m: &RawMatrix) -> Result<(), FormatError> {
    fs::write(path, encode_raw_matrix(m)?)?;
    Ok(())
}

pub fn load_raw_matrix(path: &Path) -> Result<RawMatrix, FormatError> {
    decode_raw_matrix(&fs::read(path)?)
}
