// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation corpora: records, pairing, splitting, synthetic generation and
//! the `HPRA` binary format.

pub(crate) mod format;
mod synth;

pub use format::{
    decode_corpus, encode_corpus, read_corpus, write_corpus, CorpusHeader, HPRA_MAGIC, HPRA_VERSION,
};
pub use synth::{generate_synthetic, ConeSpec, GenerateOptions, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, HprError, Result};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn code(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }
}

/// One activation vector at a (sample, token, layer) position.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord<T> {
    pub sample_id: u64,
    pub token_index: u32,
    pub layer_index: u32,
    pub label: Label,
    pub vector: Vec<T>,
}

/// Positive and negative activations at the same (sample, token, layer).
#[derive(Debug, Clone, Copy)]
pub struct ActivationPair<'a, T> {
    pub positive: &'a ActivationRecord<T>,
    pub negative: &'a ActivationRecord<T>,
}

/// An in-memory activation corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    pub d: usize,
    pub num_layers: u32,
    pub records: Vec<ActivationRecord<T>>,
}

impl<T: Scalar> Corpus<T> {
    pub fn new(d: usize, num_layers: u32, records: Vec<ActivationRecord<T>>) -> Result<Self> {
        if d < 2 {
            return Err(HprError::InvalidConfig(format!(
                "dimension {d} must be at least 2"
            )));
        }
        for r in &records {
            check_dim(d, r.vector.len())?;
            if r.layer_index >= num_layers {
                return Err(HprError::LayerAbsent(r.layer_index));
            }
            if !r.vector.iter().all(|x| x.is_finite()) {
                return Err(HprError::NonFinite("activation record"));
            }
        }
        Ok(Self {
            d,
            num_layers,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct sample ids in ascending order.
    pub fn sample_ids(&self) -> Vec<u64> {
        self.records
            .iter()
            .map(|r| r.sample_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Layers that hold at least one record, ascending.
    pub fn layers(&self) -> Vec<u32> {
        self.records
            .iter()
            .map(|r| r.layer_index)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn layer_records(&self, layer: u32) -> impl Iterator<Item = &ActivationRecord<T>> {
        self.records.iter().filter(move |r| r.layer_index == layer)
    }

    /// Records whose sample id is in `ids`, preserving order.
    pub fn subset(&self, ids: &BTreeSet<u64>) -> Corpus<T> {
        Corpus {
            d: self.d,
            num_layers: self.num_layers,
            records: self
                .records
                .iter()
                .filter(|r| ids.contains(&r.sample_id))
                .cloned()
                .collect(),
        }
    }

    /// Pair positives and negatives of one layer on (sample, token position).
    ///
    /// Within each sample the `j`-th positive token is paired with the `j`-th
    /// negative token for `j < min(S^p, S^n)`; unmatched tails are dropped.
    pub fn make_pairs(&self, layer: u32) -> Result<Vec<ActivationPair<'_, T>>> {
        type Slots<'a, T> = (Vec<&'a ActivationRecord<T>>, Vec<&'a ActivationRecord<T>>);
        let mut by_sample: BTreeMap<u64, Slots<'_, T>> = BTreeMap::new();
        let mut any = false;
        for r in self.layer_records(layer) {
            any = true;
            let slot = by_sample.entry(r.sample_id).or_default();
            match r.label {
                Label::Positive => slot.0.push(r),
                Label::Negative => slot.1.push(r),
            }
        }
        if !any {
            return Err(HprError::LayerAbsent(layer));
        }
        let (has_pos, has_neg) = by_sample.values().fold((false, false), |(p, n), (ps, ns)| {
            (p || !ps.is_empty(), n || !ns.is_empty())
        });
        if !has_pos {
            return Err(HprError::Empty("positive records for layer"));
        }
        if !has_neg {
            return Err(HprError::Empty("negative records for layer"));
        }
        let mut pairs = Vec::new();
        for (_, (mut pos, mut neg)) in by_sample {
            pos.sort_by_key(|r| r.token_index);
            neg.sort_by_key(|r| r.token_index);
            pairs.extend(
                pos.into_iter()
                    .zip(neg)
                    .map(|(positive, negative)| ActivationPair { positive, negative }),
            );
        }
        Ok(pairs)
    }
}

/// Train / validation / test partition of a corpus by sample id.
#[derive(Debug, Clone)]
pub struct Split<T> {
    pub train: Corpus<T>,
    pub validation: Corpus<T>,
    pub test: Corpus<T>,
}

/// Sizes for splitting `n` samples with cumulative floor cut points:
/// `c1 = ⌊r1·n⌋`, `c2 = ⌊(r1+r2)·n⌋`, giving `(c1, c2 - c1, n - c2)`.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(HprError::InvalidConfig(format!(
            "split ratios {ratios:?} must be >= 0"
        )));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(HprError::InvalidConfig(format!(
            "split ratios {ratios:?} sum to {sum}, not 1"
        )));
    }
    let cut = |c: f64| ((c * n as f64 + 1e-9).floor() as usize).min(n);
    let c1 = cut(ratios[0]);
    let c2 = cut(ratios[0] + ratios[1]).max(c1);
    Ok([c1, c2 - c1, n - c2])
}

/// Shuffle sample ids under `seed` and partition them with [`split_sizes`].
pub fn split_sample_ids(ids: &[u64], ratios: [f64; 3], seed: u64) -> Result<[BTreeSet<u64>; 3]> {
    let [n1, n2, _] = split_sizes(ids.len(), ratios)?;
    let mut shuffled = ids.to_vec();
    shuffled.sort_unstable();
    shuffled.dedup();
    shuffled.shuffle(&mut seed::substream(seed, seed::tag::SPLIT, 0));
    let train = shuffled[..n1].iter().copied().collect();
    let val = shuffled[n1..n1 + n2].iter().copied().collect();
    let test = shuffled[n1 + n2..].iter().copied().collect();
    Ok([train, val, test])
}

pub fn split_corpus<T: Scalar>(
    corpus: &Corpus<T>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Split<T>> {
    let [a, b, c] = split_sample_ids(&corpus.sample_ids(), ratios, seed)?;
    Ok(Split {
        train: corpus.subset(&a),
        validation: corpus.subset(&b),
        test: corpus.subset(&c),
    })
}
