// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reads a corpus byte stream assembled by hand from the documented layout,
//! the way an external exporter would write it.

use hpr_core::data::{decode_corpus, read_corpus, write_corpus};
use hpr_core::{Corpus, HprError, Label};

/// One question, one positive and one negative answer of three response
/// tokens each, two layers, d = 4, f32 payload.
fn exporter_bytes(float_bits: u32) -> Vec<u8> {
    let d = 4u32;
    let layers = 2u32;
    let tokens = 3u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"HPRA");
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&d.to_le_bytes());
    b.extend_from_slice(&layers.to_le_bytes());
    b.extend_from_slice(&float_bits.to_le_bytes());
    b.extend_from_slice(&u64::from(2 * layers * tokens).to_le_bytes());
    for layer in 0..layers {
        for label in [1u8, 0u8] {
            for t in 0..tokens {
                b.extend_from_slice(&0u64.to_le_bytes());
                b.extend_from_slice(&t.to_le_bytes());
                b.extend_from_slice(&layer.to_le_bytes());
                b.push(label);
                b.extend_from_slice(&[0u8; 7]);
                for i in 0..d {
                    let x = (layer * 100 + t * 10 + i) as f32 * if label == 1 { 1.0 } else { -1.0 };
                    if float_bits == 32 {
                        b.extend_from_slice(&x.to_le_bytes());
                    } else {
                        b.extend_from_slice(&f64::from(x).to_le_bytes());
                    }
                }
            }
        }
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

#[test]
fn hand_built_stream_loads() {
    let c: Corpus<f32> = decode_corpus(&exporter_bytes(32)).unwrap();
    assert_eq!(c.d, 4);
    assert_eq!(c.num_layers, 2);
    assert_eq!(c.len(), 2 * 2 * 3);
    let r = &c.records[4];
    assert_eq!(
        (r.layer_index, r.token_index, r.label),
        (0, 1, Label::Negative)
    );
    assert_eq!(r.vector, vec![-10.0, -11.0, -12.0, -13.0]);
    assert_eq!(c.make_pairs(1).unwrap().len(), 3);
    let wide: Corpus<f64> = decode_corpus(&exporter_bytes(64)).unwrap();
    assert_eq!(wide.records[4].vector, vec![-10.0, -11.0, -12.0, -13.0]);
}

#[test]
fn bad_headers_rejected() {
    let mut b = exporter_bytes(32);
    b[16..20].copy_from_slice(&16u32.to_le_bytes());
    assert!(matches!(
        decode_corpus::<f32>(&b),
        Err(HprError::Malformed(_))
    ));
    let mut b = exporter_bytes(32);
    b[28 + 16] = 2; // label byte
    let n = b.len() - 4;
    let crc = crc32fast::hash(&b[..n]);
    b[n..].copy_from_slice(&crc.to_le_bytes());
    assert!(matches!(
        decode_corpus::<f32>(&b),
        Err(HprError::Malformed(_))
    ));
    assert!(decode_corpus::<f32>(&exporter_bytes(32)[..20]).is_err());
}

#[test]
fn file_round_trip() {
    let c: Corpus<f32> = decode_corpus(&exporter_bytes(32)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acts.hpra");
    write_corpus(&c, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), exporter_bytes(32));
    assert_eq!(read_corpus::<f32>(&path).unwrap(), c);
    assert!(matches!(
        read_corpus::<f32>(dir.path().join("missing")),
        Err(HprError::Io { .. })
    ));
}
