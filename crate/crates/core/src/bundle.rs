// SPDX-License-Identifier: MIT OR Apache-2.0

//! `HPRB` bundle files holding trained per-layer editors.
//!
//! Layout, all integers and floats little-endian, floats always f64:
//!
//! ```text
//! magic          [u8; 4]  "HPRB"
//! version        u32      1
//! method         u8       0 = hpr, 1 = steering, 2 = diff
//! pad            [u8; 3]
//! d              u32
//! layer_count    u32
//! selected_count u32
//! selected       [u32; selected_count]   application order
//! seed           u64
//! digest_len     u32
//! digest         [u8; digest_len]        UTF-8
//! layer record, repeated layer_count times
//!   layer_index  u32
//!   mode         u8       0 = full, 1 = reflection-only, 2 = off (hpr only)
//!   selected     u8       0 or 1
//!   pad          [u8; 2]
//!   hpr:      probe [f64; d], mlp
//!   steering: alpha f64, direction [f64; d]
//!   diff:     mlp
//! checksum       u32      CRC-32 (IEEE) of every preceding byte
//!
//! mlp
//!   n_layers     u32
//!   dense layer, repeated
//!     input_dim  u32
//!     output_dim u32
//!     activation u8       0 = relu, 1 = sigmoid, 2 = identity
//!     pad        [u8; 3]
//!     weights    [f64; output_dim * input_dim]  row-major
//!     bias       [f64; output_dim]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::angle::AnglePredictor;
use crate::baselines::{DiffPredictor, SteeringVector};
use crate::data::format::{checked_payload, u32_at, u64_at};
use crate::editor::{Bundle, BundleMeta, EditMode, EditorBundle, LayerEditor};
use crate::error::{HprError, Result};
use crate::probe::LinearProbe;
use crate::scalar::Scalar;
use crate::train::{Activation, DenseLayer, Mlp};

pub const HPRB_MAGIC: [u8; 4] = *b"HPRB";
pub const HPRB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Hpr,
    Steering,
    Diff,
}

impl Method {
    fn code(self) -> u8 {
        match self {
            Method::Hpr => 0,
            Method::Steering => 1,
            Method::Diff => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Method::Hpr),
            1 => Some(Method::Steering),
            2 => Some(Method::Diff),
            _ => None,
        }
    }
}

/// A bundle of any method, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyBundle<T> {
    Hpr(EditorBundle<T>),
    Steering(Bundle<SteeringVector<T>>),
    Diff(Bundle<DiffPredictor<T>>),
}

impl<T: Scalar> AnyBundle<T> {
    pub fn method(&self) -> Method {
        match self {
            AnyBundle::Hpr(_) => Method::Hpr,
            AnyBundle::Steering(_) => Method::Steering,
            AnyBundle::Diff(_) => Method::Diff,
        }
    }

    pub fn into_hpr(self) -> Result<EditorBundle<T>> {
        match self {
            AnyBundle::Hpr(b) => Ok(b),
            other => Err(HprError::Malformed(format!(
                "expected an hpr bundle, found {:?}",
                other.method()
            ))),
        }
    }
}

impl<T: Scalar> From<EditorBundle<T>> for AnyBundle<T> {
    fn from(b: EditorBundle<T>) -> Self {
        AnyBundle::Hpr(b)
    }
}

impl<T: Scalar> From<Bundle<SteeringVector<T>>> for AnyBundle<T> {
    fn from(b: Bundle<SteeringVector<T>>) -> Self {
        AnyBundle::Steering(b)
    }
}

impl<T: Scalar> From<Bundle<DiffPredictor<T>>> for AnyBundle<T> {
    fn from(b: Bundle<DiffPredictor<T>>) -> Self {
        AnyBundle::Diff(b)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn pad(&mut self, n: usize) {
        self.0.extend(std::iter::repeat_n(0u8, n));
    }
    fn floats<T: Scalar>(&mut self, xs: &[T]) {
        for x in xs {
            self.0.extend_from_slice(&x.wide().to_le_bytes());
        }
    }
    fn mlp<T: Scalar>(&mut self, net: &Mlp<T>) {
        self.u32(net.layers.len() as u32);
        for l in &net.layers {
            self.u32(l.input_dim as u32);
            self.u32(l.output_dim as u32);
            self.u8(l.activation.code());
            self.pad(3);
            self.floats(&l.weights);
            self.floats(&l.bias);
        }
    }
}

fn header<E>(w: &mut Writer, method: Method, b: &Bundle<E>) {
    w.0.extend_from_slice(&HPRB_MAGIC);
    w.u32(HPRB_VERSION);
    w.u8(method.code());
    w.pad(3);
    w.u32(b.d as u32);
    w.u32(b.layers.len() as u32);
    w.u32(b.selected.len() as u32);
    for l in &b.selected {
        w.u32(*l);
    }
    w.u64(b.meta.seed);
    w.u32(b.meta.config_digest.len() as u32);
    w.0.extend_from_slice(b.meta.config_digest.as_bytes());
}

fn record_prefix<E>(w: &mut Writer, b: &Bundle<E>, layer: u32, mode: u8) {
    w.u32(layer);
    w.u8(mode);
    w.u8(u8::from(b.selected.contains(&layer)));
    w.pad(2);
}

pub fn encode_bundle<T: Scalar>(bundle: &AnyBundle<T>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match bundle {
        AnyBundle::Hpr(b) => {
            header(&mut w, Method::Hpr, b);
            for (l, e) in &b.layers {
                record_prefix(&mut w, b, *l, e.mode.code());
                w.floats(&e.probe.theta);
                w.mlp(&e.predictor.net);
            }
        }
        AnyBundle::Steering(b) => {
            header(&mut w, Method::Steering, b);
            for (l, s) in &b.layers {
                record_prefix(&mut w, b, *l, 0);
                w.0.extend_from_slice(&s.alpha.to_le_bytes());
                w.floats(&s.direction);
            }
        }
        AnyBundle::Diff(b) => {
            header(&mut w, Method::Diff, b);
            for (l, m) in &b.layers {
                record_prefix(&mut w, b, *l, 0);
                w.mlp(&m.net);
            }
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.b.len())
            .ok_or_else(|| HprError::Malformed(format!("bundle ends early at byte {}", self.at)))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32_at(self.take(4)?, 0))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64_at(self.take(8)?, 0))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn floats<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| HprError::Malformed("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
    fn mlp<T: Scalar>(&mut self) -> Result<Mlp<T>> {
        let n = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let input = self.u32()? as usize;
            let output = self.u32()? as usize;
            let code = self.u8()?;
            let act = Activation::from_code(code)
                .ok_or_else(|| HprError::Malformed(format!("activation code {code}")))?;
            self.take(3)?;
            let weights = self.floats(input.saturating_mul(output))?;
            let bias = self.floats(output)?;
            layers.push(DenseLayer::from_parts(weights, bias, input, act)?);
        }
        Mlp::new(layers)
    }
}

pub fn decode_bundle<T: Scalar>(bytes: &[u8]) -> Result<AnyBundle<T>> {
    if bytes.len() < 8 {
        return Err(HprError::FileLength {
            expected: 8,
            actual: bytes.len() as u64,
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != HPRB_MAGIC {
        return Err(HprError::BadMagic {
            expected: HPRB_MAGIC,
            found: magic,
        });
    }
    let version = u32_at(bytes, 4);
    if version != HPRB_VERSION {
        return Err(HprError::VersionMismatch {
            found: version,
            supported: HPRB_VERSION,
        });
    }
    let payload = checked_payload(bytes)?;
    let mut r = Reader { b: payload, at: 8 };
    let code = r.u8()?;
    let method = Method::from_code(code)
        .ok_or_else(|| HprError::Malformed(format!("method code {code}")))?;
    r.take(3)?;
    let d = r.u32()? as usize;
    let layer_count = r.u32()? as usize;
    let selected_count = r.u32()? as usize;
    let mut selected = Vec::with_capacity(selected_count.min(4096));
    for _ in 0..selected_count {
        selected.push(r.u32()?);
    }
    let seed = r.u64()?;
    let digest_len = r.u32()? as usize;
    let config_digest = String::from_utf8(r.take(digest_len)?.to_vec())
        .map_err(|_| HprError::Malformed("config digest is not UTF-8".into()))?;
    let meta = BundleMeta {
        seed,
        config_digest,
    };

    let mut flags = Vec::with_capacity(layer_count.min(4096));
    let out = match method {
        Method::Hpr => {
            let mut layers = BTreeMap::new();
            for _ in 0..layer_count {
                let (layer, mode, flag) = record_prefix_read(&mut r)?;
                flags.push((layer, flag));
                let mode = EditMode::from_code(mode)
                    .ok_or_else(|| HprError::Malformed(format!("mode code {mode}")))?;
                let probe = LinearProbe::new(r.floats(d)?, layer)?;
                let predictor = AnglePredictor::new(r.mlp()?, layer)?;
                layers.insert(layer, LayerEditor::new(probe, predictor, mode)?);
            }
            AnyBundle::Hpr(Bundle::new(d, layers, selected, meta)?)
        }
        Method::Steering => {
            let mut layers = BTreeMap::new();
            for _ in 0..layer_count {
                let (layer, _, flag) = record_prefix_read(&mut r)?;
                flags.push((layer, flag));
                let alpha = r.f64()?;
                let direction = r.floats(d)?;
                // stored direction is already unit; keep it bit-exact
                layers.insert(
                    layer,
                    SteeringVector {
                        direction,
                        alpha,
                        layer_index: layer,
                    },
                );
            }
            AnyBundle::Steering(Bundle::new(d, layers, selected, meta)?)
        }
        Method::Diff => {
            let mut layers = BTreeMap::new();
            for _ in 0..layer_count {
                let (layer, _, flag) = record_prefix_read(&mut r)?;
                flags.push((layer, flag));
                layers.insert(layer, DiffPredictor::new(r.mlp()?, layer)?);
            }
            AnyBundle::Diff(Bundle::new(d, layers, selected, meta)?)
        }
    };
    if r.at != payload.len() {
        return Err(HprError::Malformed(format!(
            "{} trailing bytes after the last layer record",
            payload.len() - r.at
        )));
    }
    let sel = match &out {
        AnyBundle::Hpr(b) => &b.selected,
        AnyBundle::Steering(b) => &b.selected,
        AnyBundle::Diff(b) => &b.selected,
    };
    for (layer, flag) in flags {
        if flag != sel.contains(&layer) {
            return Err(HprError::Malformed(format!(
                "selection flag of layer {layer} disagrees with the selection list"
            )));
        }
    }
    Ok(out)
}

fn record_prefix_read(r: &mut Reader<'_>) -> Result<(u32, u8, bool)> {
    let layer = r.u32()?;
    let mode = r.u8()?;
    let flag = r.u8()?;
    r.take(2)?;
    Ok((layer, mode, flag != 0))
}

pub fn save_bundle<T: Scalar>(bundle: &AnyBundle<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_bundle(bundle)).map_err(|e| HprError::io(path, e))
}

pub fn load_bundle<T: Scalar>(path: impl AsRef<Path>) -> Result<AnyBundle<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HprError::io(path, e))?;
    decode_bundle(&bytes)
}
