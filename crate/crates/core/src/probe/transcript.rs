//! Append-only transcript files of probe vectors.
//!
//! A transcript is a bare sequence of records (an empty file is an empty transcript):
//!
//! ```text
//! u32 LE   body length in bytes
//! body:
//!   u8     mode (0 = logits, 1 = probability)
//!   u8     dtype (0 = f32, 1 = f64), as in LLMFP/1
//!   u8     source (0 = direct, 1 = top-k recovered, 2 = top-1 recovered)
//!   u8     reserved, zero
//!   u64 LE query id
//!   u32 LE position
//!   u32 LE value count
//!   values, little-endian
//! 16 bytes first half of SHA-256(body)
//! ```
//!
//! Records are numbered from 1 in error messages.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::ProbeVector;
use crate::format::{decode_values, encode_values, payload_checksum, Dtype, CHECKSUM_LEN};
use crate::reconstruct::ReconstructionSource;
use crate::subspace::VectorMode;

const FIXED_BODY: usize = 20;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("record {record}: truncated")]
    Truncated { record: usize },
    #[error("record {record}: checksum mismatch")]
    Checksum { record: usize },
    #[error("record {record}: {reason}")]
    Malformed { record: usize, reason: String },
}

fn mode_tag(mode: VectorMode) -> u8 {
    match mode {
        VectorMode::LogitsMode => 0,
        VectorMode::ProbabilityMode => 1,
    }
}

pub fn encode_record(v: &ProbeVector) -> Vec<u8> {
    let payload = encode_values(&v.values, Dtype::F64);
    let mut body = Vec::with_capacity(FIXED_BODY + payload.len());
    body.extend_from_slice(&[mode_tag(v.mode), Dtype::F64.tag(), v.source.tag(), 0]);
    body.extend_from_slice(&v.query_id.to_le_bytes());
    body.extend_from_slice(&v.position.to_le_bytes());
    body.extend_from_slice(&(v.values.len() as u32).to_le_bytes());
    body.extend_from_slice(&payload);
    let mut out = Vec::with_capacity(4 + body.len() + CHECKSUM_LEN);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&payload_checksum(&body));
    out
}

fn decode_body(body: &[u8], record: usize) -> Result<ProbeVector, TranscriptError> {
    let bad = |reason: String| TranscriptError::Malformed { record, reason };
    if body.len() < FIXED_BODY {
        return Err(bad(format!(
            "body of {} bytes is shorter than the fixed fields",
            body.len()
        )));
    }
    let mode = match body[0] {
        0 => VectorMode::LogitsMode,
        1 => VectorMode::ProbabilityMode,
        t => return Err(bad(format!("unknown mode tag {t}"))),
    };
    let dtype =
        Dtype::from_tag(body[1]).ok_or_else(|| bad(format!("unknown dtype tag {}", body[1])))?;
    let source = ReconstructionSource::from_tag(body[2])
        .ok_or_else(|| bad(format!("unknown source tag {}", body[2])))?;
    let query_id = u64::from_le_bytes(body[4..12].try_into().expect("8 bytes"));
    let position = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes"));
    let count = u32::from_le_bytes(body[16..20].try_into().expect("4 bytes")) as usize;
    let payload = &body[FIXED_BODY..];
    if payload.len() != count * dtype.width() {
        return Err(bad(format!(
            "{count} values do not match {} payload bytes",
            payload.len()
        )));
    }
    let values = decode_values(payload, dtype);
    if values.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    Ok(ProbeVector {
        values,
        mode,
        query_id,
        position,
        source,
    })
}

pub fn decode_transcript(bytes: &[u8]) -> Result<Vec<ProbeVector>, TranscriptError> {
    let mut out = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let record = out.len() + 1;
        if rest.len() < 4 {
            return Err(TranscriptError::Truncated { record });
        }
        let len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let end = 4 + len + CHECKSUM_LEN;
        if rest.len() < end {
            return Err(TranscriptError::Truncated { record });
        }
        let body = &rest[4..4 + len];
        if payload_checksum(body)[..] != rest[4 + len..end] {
            return Err(TranscriptError::Checksum { record });
        }
        out.push(decode_body(body, record)?);
        rest = &rest[end..];
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<ProbeVector>, TranscriptError> {
    decode_transcript(&std::fs::read(path)?)
}

/// Writes `vectors` to a fresh file, replacing any existing one.
pub fn save(path: &Path, vectors: &[ProbeVector]) -> Result<(), TranscriptError> {
    let mut w = TranscriptWriter::create(path)?;
    for v in vectors {
        w.append(v)?;
    }
    w.finish()
}

/// Single-writer appender.
pub struct TranscriptWriter {
    out: BufWriter<File>,
}

impl TranscriptWriter {
    pub fn create(path: &Path) -> Result<Self, TranscriptError> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    /// Opens an existing transcript (or creates one) for appending.
    pub fn append_to(path: &Path) -> Result<Self, TranscriptError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, v: &ProbeVector) -> Result<(), TranscriptError> {
        self.out.write_all(&encode_record(v))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), TranscriptError> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(())
    }
}
