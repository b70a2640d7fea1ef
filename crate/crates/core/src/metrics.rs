// SPDX-License-Identifier: MIT OR Apache-2.0

//! Norm statistics, per-layer probe accuracy and behavior-shift matrices.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Label};
use crate::error::{HprError, Result};
use crate::linalg::norm;
use crate::probe::LinearProbe;
use crate::scalar::Scalar;

/// Box-plot summary of a set of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub stddev: f64,
}

impl BoxStats {
    /// Quantiles use linear interpolation between order statistics;
    /// `stddev` is the population standard deviation.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(HprError::Empty("values for summary statistics"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            count: v.len(),
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean,
            stddev: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub all: BoxStats,
    pub positive: Option<BoxStats>,
    pub negative: Option<BoxStats>,
}

/// Per-layer activation norm statistics, split by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Whether values are `log10` of the norms.
    pub log10: bool,
    pub layers: BTreeMap<u32, LayerNorms>,
}

pub fn norm_report<T: Scalar>(corpus: &Corpus<T>, log10: bool) -> Result<NormStats> {
    if corpus.is_empty() {
        return Err(HprError::Empty("corpus"));
    }
    let mut by_layer: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &corpus.records {
        let mut n = norm(&r.vector);
        if log10 {
            n = n.log10();
        }
        let slot = by_layer.entry(r.layer_index).or_default();
        match r.label {
            Label::Positive => slot.0.push(n),
            Label::Negative => slot.1.push(n),
        }
    }
    let mut layers = BTreeMap::new();
    for (l, (pos, neg)) in by_layer {
        let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        let opt = |v: &[f64]| {
            if v.is_empty() {
                Ok(None)
            } else {
                BoxStats::from_values(v).map(Some)
            }
        };
        layers.insert(
            l,
            LayerNorms {
                all: BoxStats::from_values(&all)?,
                positive: opt(&pos)?,
                negative: opt(&neg)?,
            },
        );
    }
    Ok(NormStats { log10, layers })
}

impl NormStats {
    /// Largest absolute per-layer difference in mean norm.
    pub fn max_mean_difference(&self, other: &NormStats) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (l, a) in &self.layers {
            let b = other.layers.get(l).ok_or(HprError::LayerAbsent(*l))?;
            worst = worst.max((a.all.mean - b.all.mean).abs());
        }
        Ok(worst)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let unit = if self.log10 { "log10 norm" } else { "norm" };
        let _ = writeln!(s, "layer  label     count        min         q1     median         q3        max       mean     stddev  ({unit})");
        for (l, ln) in &self.layers {
            for (name, stats) in [
                ("all", Some(&ln.all)),
                ("positive", ln.positive.as_ref()),
                ("negative", ln.negative.as_ref()),
            ] {
                if let Some(b) = stats {
                    let _ = writeln!(
                        s,
                        "{l:>5}  {name:<8} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                        b.count, b.min, b.q1, b.median, b.q3, b.max, b.mean, b.stddev
                    );
                }
            }
        }
        s
    }

    /// Delimited columns for external plotting.
    pub fn csv(&self) -> String {
        let mut s = String::from("layer,label,count,min,q1,median,q3,max,mean,stddev\n");
        for (l, ln) in &self.layers {
            for (name, stats) in [
                ("all", Some(&ln.all)),
                ("positive", ln.positive.as_ref()),
                ("negative", ln.negative.as_ref()),
            ] {
                if let Some(b) = stats {
                    let _ = writeln!(
                        s,
                        "{l},{name},{},{},{},{},{},{},{},{}",
                        b.count, b.min, b.q1, b.median, b.q3, b.max, b.mean, b.stddev
                    );
                }
            }
        }
        s
    }
}

/// Per-layer mean of `|‖a'‖ − ‖a‖| / ‖a‖` between aligned corpora.
pub fn relative_norm_change<T: Scalar>(
    before: &Corpus<T>,
    after: &Corpus<T>,
) -> Result<BTreeMap<u32, f64>> {
    if before.len() != after.len() {
        return Err(HprError::LengthMismatch {
            left: before.len(),
            right: after.len(),
        });
    }
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (a, b) in before.records.iter().zip(&after.records) {
        if (a.sample_id, a.token_index, a.layer_index)
            != (b.sample_id, b.token_index, b.layer_index)
        {
            return Err(HprError::Malformed(
                "corpora are not aligned record by record".into(),
            ));
        }
        let n0 = norm(&a.vector);
        if n0 == 0.0 {
            return Err(HprError::ZeroNorm);
        }
        let slot = acc.entry(a.layer_index).or_default();
        slot.0 += (norm(&b.vector) - n0).abs() / n0;
        slot.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(l, (s, n))| (l, s / n as f64))
        .collect())
}

/// Four-way partition of items by correctness before and after editing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftMatrix {
    pub total: usize,
    pub false_to_true: usize,
    pub true_to_false: usize,
    pub remains_true: usize,
    pub remains_false: usize,
}

impl ShiftMatrix {
    fn pct(&self, count: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.total as f64
        }
    }

    pub fn false_to_true_pct(&self) -> f64 {
        self.pct(self.false_to_true)
    }

    pub fn true_to_false_pct(&self) -> f64 {
        self.pct(self.true_to_false)
    }

    pub fn remains_true_pct(&self) -> f64 {
        self.pct(self.remains_true)
    }

    pub fn remains_false_pct(&self) -> f64 {
        self.pct(self.remains_false)
    }

    /// Percentage correct after editing.
    pub fn accuracy(&self) -> f64 {
        self.pct(self.false_to_true + self.remains_true)
    }

    pub fn accuracy_before(&self) -> f64 {
        self.pct(self.true_to_false + self.remains_true)
    }
}

impl fmt::Display for ShiftMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "F->T {:6.2}%  T->F {:6.2}%  T->T {:6.2}%  F->F {:6.2}%  acc {:6.2}%  (n = {})",
            self.false_to_true_pct(),
            self.true_to_false_pct(),
            self.remains_true_pct(),
            self.remains_false_pct(),
            self.accuracy(),
            self.total
        )
    }
}

pub fn shift_matrix(before: &[bool], after: &[bool]) -> Result<ShiftMatrix> {
    if before.len() != after.len() {
        return Err(HprError::LengthMismatch {
            left: before.len(),
            right: after.len(),
        });
    }
    let mut m = ShiftMatrix {
        total: before.len(),
        false_to_true: 0,
        true_to_false: 0,
        remains_true: 0,
        remains_false: 0,
    };
    for (&b, &a) in before.iter().zip(after) {
        match (b, a) {
            (false, true) => m.false_to_true += 1,
            (true, false) => m.true_to_false += 1,
            (true, true) => m.remains_true += 1,
            (false, false) => m.remains_false += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerAccuracy {
    pub layer: u32,
    pub accuracy: f64,
    pub count: usize,
}

/// Accuracy of each layer's probe over that layer's labeled records.
pub fn probe_accuracy_curve<T: Scalar>(
    corpus: &Corpus<T>,
    probes: &BTreeMap<u32, LinearProbe<T>>,
) -> Result<Vec<LayerAccuracy>> {
    let mut out = Vec::new();
    for layer in corpus.layers() {
        let probe = probes.get(&layer).ok_or(HprError::MissingProbe(layer))?;
        let items: Vec<(&[T], Label)> = corpus
            .layer_records(layer)
            .map(|r| (r.vector.as_slice(), r.label))
            .collect();
        out.push(LayerAccuracy {
            layer,
            accuracy: probe.accuracy(&items)?,
            count: items.len(),
        });
    }
    Ok(out)
}

pub fn accuracy_table(curve: &[LayerAccuracy]) -> String {
    let mut s = String::from("layer  accuracy  count\n");
    for c in curve {
        let _ = writeln!(s, "{:>5}  {:>8.4}  {:>5}", c.layer, c.accuracy, c.count);
    }
    s
}

pub fn accuracy_csv(curve: &[LayerAccuracy]) -> String {
    let mut s = String::from("layer,accuracy,count\n");
    for c in curve {
        let _ = writeln!(s, "{},{},{}", c.layer, c.accuracy, c.count);
    }
    s
}
