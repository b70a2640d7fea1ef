// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end experiment plumbing: per-layer training, judge probes,
//! method evaluation and layer sweeps.
//!
//! Evaluation protocol: the corpus is split by sample into train /
//! validation / test. Editors are trained on train and ranked on
//! validation. The test split is halved by seeded shuffle: one half trains
//! a probe-only judge per layer, the other half is edited and scored by the
//! judges.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angle::{init_layer_modules, joint_train};
use crate::baselines::{fit_diff, fit_steering, DiffPredictor, SteeringVector, DEFAULT_ALPHA};
use crate::data::{split_corpus, Corpus, Label};
use crate::editor::{
    edit_stream, select_layers, Bundle, BundleMeta, EditMode, EditorBundle, LayerEdit, LayerEditor,
    StreamTrace,
};
use crate::error::{HprError, Result};
use crate::linalg::norm;
use crate::metrics::{shift_matrix, ShiftMatrix};
use crate::probe::{train_probe, LinearProbe};
use crate::scalar::{bits_equal, Scalar};
use crate::seed;
use crate::train::{TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Train / validation / test fractions of the samples.
    pub split: [f64; 3],
    /// Layers edited, chosen by validation probe accuracy.
    pub k: usize,
    /// Steering strengths evaluated.
    pub alphas: Vec<f64>,
    pub include_diff: bool,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split: [0.45, 0.05, 0.5],
            k: 5,
            alphas: vec![DEFAULT_ALPHA],
            include_diff: true,
            train: TrainConfig::default(),
        }
    }
}

/// Editors for every layer with their training logs and validation accuracy.
#[derive(Debug, Clone)]
pub struct TrainedLayers<T> {
    pub d: usize,
    pub editors: BTreeMap<u32, LayerEditor<T>>,
    pub validation_accuracy: BTreeMap<u32, f64>,
    pub logs: BTreeMap<u32, TrainLog>,
}

impl<T: Scalar> TrainedLayers<T> {
    pub fn ranking(&self) -> Vec<(u32, f64)> {
        self.validation_accuracy
            .iter()
            .map(|(l, a)| (*l, *a))
            .collect()
    }

    pub fn bundle(&self, k: usize, meta: BundleMeta) -> Result<EditorBundle<T>> {
        let selected = select_layers(&self.ranking(), k)?;
        Bundle::new(self.d, self.editors.clone(), selected, meta)
    }

    pub fn probes(&self) -> BTreeMap<u32, LinearProbe<T>> {
        self.editors
            .iter()
            .map(|(l, e)| (*l, e.probe.clone()))
            .collect()
    }
}

fn labeled<T: Scalar>(corpus: &Corpus<T>, layer: u32) -> Vec<(&[T], Label)> {
    corpus
        .layer_records(layer)
        .map(|r| (r.vector.as_slice(), r.label))
        .collect()
}

/// Jointly train a probe and angle predictor for every layer of `train`,
/// in parallel, each from its own seeded substreams.
pub fn train_layers<T: Scalar>(
    train: &Corpus<T>,
    validation: &Corpus<T>,
    config: &TrainConfig,
    seed_value: u64,
) -> Result<TrainedLayers<T>> {
    config.validate()?;
    let layers = train.layers();
    if layers.is_empty() {
        return Err(HprError::Empty("training corpus"));
    }
    let trained: Vec<(u32, LayerEditor<T>, f64, TrainLog)> = layers
        .par_iter()
        .map(|&l| {
            let pairs = train.make_pairs(l)?;
            let (probe, predictor) =
                init_layer_modules(train.d, l, config, seed_value, u64::from(l))?;
            let (probe, predictor, log) =
                joint_train(probe, predictor, &pairs, config, seed_value, u64::from(l))?;
            let val = labeled(validation, l);
            let acc = if val.is_empty() {
                return Err(HprError::Empty("validation records for a trained layer"));
            } else {
                probe.accuracy(&val)?
            };
            Ok((
                l,
                LayerEditor::new(probe, predictor, EditMode::Full)?,
                acc,
                log,
            ))
        })
        .collect::<Result<_>>()?;
    let mut out = TrainedLayers {
        d: train.d,
        editors: BTreeMap::new(),
        validation_accuracy: BTreeMap::new(),
        logs: BTreeMap::new(),
    };
    for (l, e, acc, log) in trained {
        out.editors.insert(l, e);
        out.validation_accuracy.insert(l, acc);
        out.logs.insert(l, log);
    }
    Ok(out)
}

/// Probe-only judges, one per layer, trained on a slice disjoint from the
/// editors' training data.
pub fn train_judges<T: Scalar>(
    corpus: &Corpus<T>,
    layers: &[u32],
    config: &TrainConfig,
    seed_value: u64,
) -> Result<BTreeMap<u32, LinearProbe<T>>> {
    let judge_seed = seed::derive(seed_value, seed::tag::JUDGE, 0);
    let judges: Vec<(u32, LinearProbe<T>)> = layers
        .par_iter()
        .map(|&l| {
            let pairs = corpus.make_pairs(l)?;
            let (probe, _) = train_probe(&pairs, config, judge_seed, u64::from(l))?;
            Ok((l, probe))
        })
        .collect::<Result<_>>()?;
    Ok(judges.into_iter().collect())
}

/// Halve a corpus by sample id: `(judge slice, evaluation slice)`.
pub fn judge_eval_split<T: Scalar>(test: &Corpus<T>, seed_value: u64) -> (Corpus<T>, Corpus<T>) {
    let mut ids = test.sample_ids();
    ids.shuffle(&mut seed::substream(seed_value, seed::tag::JUDGE, 1));
    let half = ids.len() / 2;
    let judge: BTreeSet<u64> = ids[..half].iter().copied().collect();
    let eval: BTreeSet<u64> = ids[half..].iter().copied().collect();
    (test.subset(&judge), test.subset(&eval))
}

/// Fit one steering vector per listed layer.
pub fn steering_bundle<T: Scalar>(
    train: &Corpus<T>,
    layers: &[u32],
    alpha: f64,
    meta: BundleMeta,
) -> Result<Bundle<SteeringVector<T>>> {
    let mut map = BTreeMap::new();
    for &l in layers {
        map.insert(l, fit_steering(&train.make_pairs(l)?, alpha)?);
    }
    Bundle::new(train.d, map, layers.to_vec(), meta)
}

/// Train one difference predictor per listed layer.
pub fn diff_bundle<T: Scalar>(
    train: &Corpus<T>,
    layers: &[u32],
    config: &TrainConfig,
    meta: BundleMeta,
) -> Result<Bundle<DiffPredictor<T>>> {
    let fitted: Vec<(u32, DiffPredictor<T>)> = layers
        .par_iter()
        .map(|&l| {
            let (m, _) = fit_diff(&train.make_pairs(l)?, config, meta.seed, u64::from(l))?;
            Ok((l, m))
        })
        .collect::<Result<_>>()?;
    Bundle::new(train.d, fitted.into_iter().collect(), layers.to_vec(), meta)
}

/// Scores of one editing method on the evaluation slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub layers: Vec<u32>,
    /// Negative vectors in the edited layers.
    pub negatives: usize,
    /// Fraction of those the judges classify positive after editing.
    pub negative_flip_rate: f64,
    pub positives: usize,
    /// Positive vectors in the edited layers whose bits changed.
    pub positives_changed: usize,
    pub mean_relative_norm_change: f64,
    pub max_relative_norm_change: f64,
    /// Item-level before/after correctness under the judges.
    pub shift: ShiftMatrix,
    pub trace: StreamTrace,
}

/// Judge verdict per (sample, label) item: the mean over `layers` of the
/// judge score of the item's token-averaged activation, `>= 0.5` meaning
/// positive. Items are ordered by (sample, label).
pub fn item_verdicts<T: Scalar>(
    corpus: &Corpus<T>,
    judges: &BTreeMap<u32, LinearProbe<T>>,
    layers: &[u32],
) -> Result<BTreeMap<(u64, Label), bool>> {
    let mut sums: BTreeMap<(u64, Label, u32), (Vec<f64>, usize)> = BTreeMap::new();
    let wanted: BTreeSet<u32> = layers.iter().copied().collect();
    for r in corpus
        .records
        .iter()
        .filter(|r| wanted.contains(&r.layer_index))
    {
        let slot = sums
            .entry((r.sample_id, r.label, r.layer_index))
            .or_insert_with(|| (vec![0.0; corpus.d], 0));
        for (s, x) in slot.0.iter_mut().zip(&r.vector) {
            *s += x.wide();
        }
        slot.1 += 1;
    }
    let mut scores: BTreeMap<(u64, Label), (f64, usize)> = BTreeMap::new();
    for ((sample, label, layer), (sum, n)) in sums {
        let judge = judges.get(&layer).ok_or(HprError::MissingProbe(layer))?;
        let mean: Vec<T> = sum.iter().map(|s| T::of(s / n as f64)).collect();
        let slot = scores.entry((sample, label)).or_default();
        slot.0 += judge.score(&mean)?;
        slot.1 += 1;
    }
    Ok(scores
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64 >= 0.5))
        .collect())
}

/// Score an edited corpus against its original under the judges.
///
/// `layers` are the edited layers; when empty, every judged layer is used
/// for item verdicts and the flip rate.
pub fn evaluate_edit<T: Scalar>(
    method: &str,
    original: &Corpus<T>,
    edited: &Corpus<T>,
    judges: &BTreeMap<u32, LinearProbe<T>>,
    layers: &[u32],
    trace: StreamTrace,
) -> Result<MethodReport> {
    if original.len() != edited.len() {
        return Err(HprError::LengthMismatch {
            left: original.len(),
            right: edited.len(),
        });
    }
    let scored: Vec<u32> = if layers.is_empty() {
        judges.keys().copied().collect()
    } else {
        layers.to_vec()
    };
    let in_scope: BTreeSet<u32> = scored.iter().copied().collect();
    let (mut negatives, mut flipped, mut positives, mut changed) = (0usize, 0usize, 0usize, 0usize);
    let (mut rel_sum, mut rel_max, mut counted) = (0.0f64, 0.0f64, 0usize);
    for (a, b) in original.records.iter().zip(&edited.records) {
        if !in_scope.contains(&a.layer_index) {
            continue;
        }
        let judge = judges
            .get(&a.layer_index)
            .ok_or(HprError::MissingProbe(a.layer_index))?;
        match a.label {
            Label::Negative => {
                negatives += 1;
                if judge.classify(&b.vector)? == Label::Positive {
                    flipped += 1;
                }
            }
            Label::Positive => {
                positives += 1;
                if !bits_equal(&a.vector, &b.vector) {
                    changed += 1;
                }
            }
        }
        let n0 = norm(&a.vector);
        if n0 > 0.0 {
            let rel = (norm(&b.vector) - n0).abs() / n0;
            rel_sum += rel;
            rel_max = rel_max.max(rel);
            counted += 1;
        }
    }
    let before = item_verdicts(original, judges, &scored)?;
    let after = item_verdicts(edited, judges, &scored)?;
    let b: Vec<bool> = before.values().copied().collect();
    let a: Vec<bool> = after.values().copied().collect();
    Ok(MethodReport {
        method: method.to_string(),
        layers: layers.to_vec(),
        negatives,
        negative_flip_rate: if negatives == 0 {
            0.0
        } else {
            flipped as f64 / negatives as f64
        },
        positives,
        positives_changed: changed,
        mean_relative_norm_change: if counted == 0 {
            0.0
        } else {
            rel_sum / counted as f64
        },
        max_relative_norm_change: rel_max,
        shift: shift_matrix(&b, &a)?,
        trace,
    })
}

/// Edit `eval` with `bundle` and score the result.
pub fn run_method<T: Scalar, E: LayerEdit<T>>(
    method: &str,
    bundle: &Bundle<E>,
    eval: &Corpus<T>,
    judges: &BTreeMap<u32, LinearProbe<T>>,
) -> Result<MethodReport> {
    let (edited, trace) = edit_stream(bundle, eval)?;
    evaluate_edit(method, eval, &edited, judges, &bundle.selected, trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub layers: Vec<u32>,
    /// Fraction of negatives across every judged layer that the judges
    /// classify positive after editing.
    pub success_rate: f64,
    /// Flip rate restricted to the edited layers.
    pub edited_layer_flip_rate: f64,
    pub mean_relative_norm_change: f64,
    pub edited: u64,
    pub fallbacks: u64,
}

/// Evaluate top-`k` bundles for each `k`.
pub fn layer_sweep<T: Scalar>(
    trained: &TrainedLayers<T>,
    eval: &Corpus<T>,
    judges: &BTreeMap<u32, LinearProbe<T>>,
    ks: &[usize],
    meta: &BundleMeta,
) -> Result<Vec<SweepRow>> {
    let all: Vec<u32> = judges.keys().copied().collect();
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let bundle = trained.bundle(k, meta.clone())?;
        let (edited, trace) = edit_stream(&bundle, eval)?;
        let overall = evaluate_edit("hpr", eval, &edited, judges, &all, trace.clone())?;
        let selected_rate = if bundle.selected.is_empty() {
            0.0
        } else {
            evaluate_edit(
                "hpr",
                eval,
                &edited,
                judges,
                &bundle.selected,
                StreamTrace::default(),
            )?
            .negative_flip_rate
        };
        rows.push(SweepRow {
            k,
            layers: bundle.selected.clone(),
            success_rate: overall.negative_flip_rate,
            edited_layer_flip_rate: selected_rate,
            mean_relative_norm_change: overall.mean_relative_norm_change,
            edited: trace.edited(),
            fallbacks: trace.fallbacks(),
        });
    }
    Ok(rows)
}

/// Everything measured in one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub split_sizes: [usize; 3],
    pub validation_accuracy: BTreeMap<u32, f64>,
    /// Edit-probe accuracy on the whole test split, per layer.
    pub test_accuracy: BTreeMap<u32, f64>,
    pub judge_accuracy: BTreeMap<u32, f64>,
    pub selected: Vec<u32>,
    pub methods: Vec<MethodReport>,
    /// Edited positives the edit probe had classified positive (must be 0
    /// for HPR) and how many such positives were seen.
    pub hpr_probe_positive_changed: usize,
    pub hpr_probe_positive_total: usize,
}

impl ExperimentReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn best_test_accuracy(&self) -> Option<(u32, f64)> {
        self.test_accuracy
            .iter()
            .map(|(l, a)| (*l, *a))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
    }
}

/// Positive vectors the edit probe classified positive, and how many of
/// those changed under editing.
pub fn probe_positive_preservation<T: Scalar>(
    bundle: &EditorBundle<T>,
    original: &Corpus<T>,
    edited: &Corpus<T>,
) -> Result<(usize, usize)> {
    let (mut total, mut changed) = (0usize, 0usize);
    for (a, b) in original.records.iter().zip(&edited.records) {
        if !bundle.selected.contains(&a.layer_index) {
            continue;
        }
        let editor = &bundle.layers[&a.layer_index];
        if editor.probe.classify(&a.vector)? == Label::Positive {
            total += 1;
            if !bits_equal(&a.vector, &b.vector) {
                changed += 1;
            }
        }
    }
    Ok((total, changed))
}

pub fn steering_name(alpha: f64) -> String {
    format!("steering(alpha={alpha})")
}

/// Train, edit and evaluate every method on one corpus.
pub fn run_experiment<T: Scalar>(
    corpus: &Corpus<T>,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let split = split_corpus(corpus, config.split, config.seed)?;
    let trained = train_layers(&split.train, &split.validation, &config.train, config.seed)?;
    let meta = BundleMeta {
        seed: config.seed,
        config_digest: config_digest(config),
    };
    let bundle = trained.bundle(config.k, meta.clone())?;
    let (judge_slice, eval) = judge_eval_split(&split.test, config.seed);
    let layers = corpus.layers();
    let judges = train_judges(&judge_slice, &layers, &config.train, config.seed)?;

    let mut test_accuracy = BTreeMap::new();
    let mut judge_accuracy = BTreeMap::new();
    for &l in &layers {
        let items = labeled(&split.test, l);
        test_accuracy.insert(l, trained.editors[&l].probe.accuracy(&items)?);
        judge_accuracy.insert(l, judges[&l].accuracy(&labeled(&eval, l))?);
    }

    let mut methods = Vec::new();
    let full = bundle.clone().with_mode(EditMode::Full);
    let (edited, trace) = edit_stream(&full, &eval)?;
    let (hpr_total, hpr_changed) = probe_positive_preservation(&full, &eval, &edited)?;
    methods.push(evaluate_edit(
        "hpr-full",
        &eval,
        &edited,
        &judges,
        &full.selected,
        trace,
    )?);
    let reflect = bundle.clone().with_mode(EditMode::ReflectionOnly);
    methods.push(run_method("hpr-reflection-only", &reflect, &eval, &judges)?);
    let off = bundle.clone().with_mode(EditMode::Off);
    methods.push(run_method("off", &off, &eval, &judges)?);
    for &alpha in &config.alphas {
        let s = steering_bundle(&split.train, &bundle.selected, alpha, meta.clone())?;
        methods.push(run_method(&steering_name(alpha), &s, &eval, &judges)?);
    }
    if config.include_diff {
        let dm = diff_bundle(&split.train, &bundle.selected, &config.train, meta.clone())?;
        methods.push(run_method("diff", &dm, &eval, &judges)?);
    }

    Ok(ExperimentReport {
        seed: config.seed,
        split_sizes: [
            split.train.sample_ids().len(),
            split.validation.sample_ids().len(),
            split.test.sample_ids().len(),
        ],
        validation_accuracy: trained.validation_accuracy.clone(),
        test_accuracy,
        judge_accuracy,
        selected: bundle.selected.clone(),
        methods,
        hpr_probe_positive_changed: hpr_changed,
        hpr_probe_positive_total: hpr_total,
    })
}

/// Short hex digest of a serializable configuration.
pub fn config_digest<C: Serialize>(config: &C) -> String {
    let text = serde_json::to_string(config).unwrap_or_default();
    format!("{:08x}", crc32fast::hash(text.as_bytes()))
}
