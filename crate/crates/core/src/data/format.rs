// SPDX-License-Identifier: MIT OR Apache-2.0

//! `HPRA` activation corpus files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! header (28 bytes)
//!   magic        [u8; 4]  "HPRA"
//!   version      u32      1
//!   d            u32
//!   num_layers   u32
//!   float_bits   u32      32 or 64
//!   records      u64
//! record (24 + d * float_bits/8 bytes), repeated
//!   sample_id    u64
//!   token_index  u32
//!   layer_index  u32
//!   label        u8       0 = negative, 1 = positive
//!   pad          [u8; 7]  zero
//!   vector       [float; d]
//! checksum       u32      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Records have a fixed stride, so record `i` starts at `28 + i * stride`.

use std::fs;
use std::path::Path;

use crate::data::{ActivationRecord, Corpus, Label};
use crate::error::{HprError, Result};
use crate::scalar::Scalar;

pub const HPRA_MAGIC: [u8; 4] = *b"HPRA";
pub const HPRA_VERSION: u32 = 1;

const HEADER_LEN: usize = 28;
const RECORD_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusHeader {
    pub version: u32,
    pub d: u32,
    pub num_layers: u32,
    pub float_bits: u32,
    pub record_count: u64,
}

impl CorpusHeader {
    pub fn stride(&self) -> u64 {
        RECORD_HEADER_LEN as u64 + u64::from(self.d) * u64::from(self.float_bits / 8)
    }

    /// Total file length implied by the header.
    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.record_count * self.stride() + 4
    }

    fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(HprError::FileLength {
                expected: HEADER_LEN as u64 + 4,
                actual: bytes.len() as u64,
            });
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        if magic != HPRA_MAGIC {
            return Err(HprError::BadMagic {
                expected: HPRA_MAGIC,
                found: magic,
            });
        }
        let header = CorpusHeader {
            version: u32_at(bytes, 4),
            d: u32_at(bytes, 8),
            num_layers: u32_at(bytes, 12),
            float_bits: u32_at(bytes, 16),
            record_count: u64_at(bytes, 20),
        };
        if header.version != HPRA_VERSION {
            return Err(HprError::VersionMismatch {
                found: header.version,
                supported: HPRA_VERSION,
            });
        }
        if header.float_bits != 32 && header.float_bits != 64 {
            return Err(HprError::Malformed(format!(
                "float width {} not supported",
                header.float_bits
            )));
        }
        Ok(header)
    }
}

pub(crate) fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

pub(crate) fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Verify a trailing CRC-32 and return the payload it covers.
pub(crate) fn checked_payload(bytes: &[u8]) -> Result<&[u8]> {
    let split = bytes.len() - 4;
    let stored = u32_at(bytes, split);
    let computed = crc32fast::hash(&bytes[..split]);
    if stored != computed {
        return Err(HprError::Checksum { stored, computed });
    }
    Ok(&bytes[..split])
}

/// Encode a corpus at its native scalar width.
pub fn encode_corpus<T: Scalar>(corpus: &Corpus<T>) -> Vec<u8> {
    let header = CorpusHeader {
        version: HPRA_VERSION,
        d: corpus.d as u32,
        num_layers: corpus.num_layers,
        float_bits: T::BITS,
        record_count: corpus.records.len() as u64,
    };
    let mut out = Vec::with_capacity(header.file_len() as usize);
    out.extend_from_slice(&HPRA_MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    out.extend_from_slice(&header.d.to_le_bytes());
    out.extend_from_slice(&header.num_layers.to_le_bytes());
    out.extend_from_slice(&header.float_bits.to_le_bytes());
    out.extend_from_slice(&header.record_count.to_le_bytes());
    for r in &corpus.records {
        out.extend_from_slice(&r.sample_id.to_le_bytes());
        out.extend_from_slice(&r.token_index.to_le_bytes());
        out.extend_from_slice(&r.layer_index.to_le_bytes());
        out.push(r.label.code());
        out.extend_from_slice(&[0u8; 7]);
        for &x in &r.vector {
            x.put_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decode a corpus, converting stored floats to `T` when widths differ.
pub fn decode_corpus<T: Scalar>(bytes: &[u8]) -> Result<Corpus<T>> {
    let header = CorpusHeader::parse(bytes)?;
    let expected = header.file_len();
    if bytes.len() as u64 != expected {
        return Err(HprError::FileLength {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let payload = checked_payload(bytes)?;
    let d = header.d as usize;
    let stride = header.stride() as usize;
    let mut records = Vec::with_capacity(header.record_count as usize);
    for chunk in payload[HEADER_LEN..].chunks_exact(stride) {
        let label = Label::from_code(chunk[16])
            .ok_or_else(|| HprError::Malformed(format!("label byte {}", chunk[16])))?;
        let floats = &chunk[RECORD_HEADER_LEN..];
        let vector: Vec<T> = match header.float_bits {
            32 => floats
                .chunks_exact(4)
                .map(|b| T::of(f32::get_le(b).wide()))
                .collect(),
            _ => floats
                .chunks_exact(8)
                .map(|b| T::of(f64::get_le(b)))
                .collect(),
        };
        records.push(ActivationRecord {
            sample_id: u64_at(chunk, 0),
            token_index: u32_at(chunk, 8),
            layer_index: u32_at(chunk, 12),
            label,
            vector,
        });
    }
    debug_assert_eq!(records.len(), header.record_count as usize);
    Corpus::new(d, header.num_layers, records)
}

pub fn write_corpus<T: Scalar>(corpus: &Corpus<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_corpus(corpus)).map_err(|e| HprError::io(path, e))
}

pub fn read_corpus<T: Scalar>(path: impl AsRef<Path>) -> Result<Corpus<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HprError::io(path, e))?;
    decode_corpus(&bytes)
}
