// SPDX-License-Identifier: MIT OR Apache-2.0

//! Inference-time editing: per-layer HPR editors, layer selection and
//! application over whole corpora.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angle::AnglePredictor;
use crate::data::{Corpus, Label};
use crate::error::{check_dim, HprError, Result};
use crate::linalg::{angle_between, householder_reflect, rotate_in_plane};
use crate::probe::LinearProbe;
use crate::scalar::{cast_vec, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditMode {
    /// Reflect, then rotate by the predicted angle.
    Full,
    /// Reflect only (no angle prediction).
    ReflectionOnly,
    Off,
}

impl EditMode {
    pub fn code(self) -> u8 {
        match self {
            EditMode::Full => 0,
            EditMode::ReflectionOnly => 1,
            EditMode::Off => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EditMode::Full),
            1 => Some(EditMode::ReflectionOnly),
            2 => Some(EditMode::Off),
            _ => None,
        }
    }
}

/// What happened to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditTrace {
    /// Probe decision, when a probe was consulted.
    pub classified: Option<Label>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub edited: bool,
    /// The rotation plane was degenerate and the input was returned unchanged.
    pub fallback: bool,
}

impl EditTrace {
    pub fn untouched(classified: Option<Label>) -> Self {
        Self {
            classified,
            gamma1: None,
            gamma2: None,
            edited: false,
            fallback: false,
        }
    }
}

/// Anything that edits single activations of one layer.
pub trait LayerEdit<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn edit(&self, a: &[T]) -> Result<(Vec<T>, EditTrace)>;
}

/// HPR editor for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEditor<T> {
    pub probe: LinearProbe<T>,
    pub predictor: AnglePredictor<T>,
    pub mode: EditMode,
    pub layer_index: u32,
}

impl<T: Scalar> LayerEditor<T> {
    pub fn new(
        probe: LinearProbe<T>,
        predictor: AnglePredictor<T>,
        mode: EditMode,
    ) -> Result<Self> {
        check_dim(probe.dim(), predictor.dim())?;
        if probe.layer_index != predictor.layer_index {
            return Err(HprError::Shape(format!(
                "probe layer {} differs from predictor layer {}",
                probe.layer_index, predictor.layer_index
            )));
        }
        let layer_index = probe.layer_index;
        Ok(Self {
            probe,
            predictor,
            mode,
            layer_index,
        })
    }

    pub fn with_mode(mut self, mode: EditMode) -> Self {
        self.mode = mode;
        self
    }

    /// Apply the editing function to `a`.
    ///
    /// Vectors the probe classifies positive come back unchanged. Negatives
    /// are reflected about the probe hyperplane and, in [`EditMode::Full`],
    /// rotated from `a` by the predicted angle inside `span{a, Ha}`. A
    /// degenerate plane falls back to returning `a`.
    pub fn edit_activation(&self, a: &[T]) -> Result<(Vec<T>, EditTrace)> {
        check_dim(self.probe.dim(), a.len())?;
        if self.mode == EditMode::Off {
            return Ok((a.to_vec(), EditTrace::untouched(None)));
        }
        let class = self.probe.classify(a)?;
        if class == Label::Positive {
            return Ok((a.to_vec(), EditTrace::untouched(Some(class))));
        }
        // f64 throughout; one rounding to T at the end
        let a64: Vec<f64> = a.iter().map(|x| x.wide()).collect();
        let theta64: Vec<f64> = self.probe.theta.iter().map(|x| x.wide()).collect();
        let reflected = householder_reflect(&a64, &theta64)?;
        let gamma2 = angle_between(&reflected, &a64)?.radians();
        if self.mode == EditMode::ReflectionOnly {
            let trace = EditTrace {
                classified: Some(class),
                gamma1: None,
                gamma2: Some(gamma2),
                edited: true,
                fallback: false,
            };
            return Ok((cast_vec(&reflected), trace));
        }
        let gamma1 = self.predictor.predict(a)?;
        match rotate_in_plane(&a64, &reflected, gamma1) {
            Ok(rotated) => Ok((
                cast_vec(&rotated),
                EditTrace {
                    classified: Some(class),
                    gamma1: Some(gamma1.radians()),
                    gamma2: Some(gamma2),
                    edited: true,
                    fallback: false,
                },
            )),
            Err(HprError::DegeneratePlane { .. }) => Ok((
                a.to_vec(),
                EditTrace {
                    classified: Some(class),
                    gamma1: Some(gamma1.radians()),
                    gamma2: Some(gamma2),
                    edited: false,
                    fallback: true,
                },
            )),
            Err(e) => Err(e),
        }
    }
}

impl<T: Scalar> LayerEdit<T> for LayerEditor<T> {
    fn dim(&self) -> usize {
        self.probe.dim()
    }

    fn edit(&self, a: &[T]) -> Result<(Vec<T>, EditTrace)> {
        self.edit_activation(a)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub seed: u64,
    /// Digest of the effective training configuration.
    pub config_digest: String,
}

/// Per-layer editors plus the ordered list of layers that are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle<E> {
    pub d: usize,
    pub layers: BTreeMap<u32, E>,
    pub selected: Vec<u32>,
    pub meta: BundleMeta,
}

pub type EditorBundle<T> = Bundle<LayerEditor<T>>;

impl<E> Bundle<E> {
    pub fn new(
        d: usize,
        layers: BTreeMap<u32, E>,
        selected: Vec<u32>,
        meta: BundleMeta,
    ) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for l in &selected {
            if !layers.contains_key(l) {
                return Err(HprError::LayerAbsent(*l));
            }
            if !seen.insert(*l) {
                return Err(HprError::InvalidConfig(format!("layer {l} selected twice")));
            }
        }
        Ok(Self {
            d,
            layers,
            selected,
            meta,
        })
    }

    pub fn k(&self) -> usize {
        self.selected.len()
    }

    /// Same editors with a different selection.
    pub fn reselect(&self, selected: Vec<u32>) -> Result<Self>
    where
        E: Clone,
    {
        Bundle::new(self.d, self.layers.clone(), selected, self.meta.clone())
    }
}

impl<T: Scalar> EditorBundle<T> {
    pub fn with_mode(mut self, mode: EditMode) -> Self {
        for e in self.layers.values_mut() {
            e.mode = mode;
        }
        self
    }
}

/// The `k` layers with the highest accuracy; ties go to the lower index.
pub fn select_layers(accuracies: &[(u32, f64)], k: usize) -> Result<Vec<u32>> {
    if k > accuracies.len() {
        return Err(HprError::InvalidConfig(format!(
            "k = {k} exceeds the {} layers with trained probes",
            accuracies.len()
        )));
    }
    let mut ranked = accuracies.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(k).map(|(l, _)| l).collect())
}

/// Streaming moments of an angle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AngleStats {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl AngleStats {
    fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(&mut self, o: &AngleStats) {
        self.count += o.count;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub vectors: u64,
    pub classified_negative: u64,
    pub edited: u64,
    pub fallbacks: u64,
    /// Edited vectors whose source record was labeled negative.
    pub edited_negative_records: u64,
    pub negative_records: u64,
    pub gamma1: AngleStats,
    pub gamma2: AngleStats,
}

impl LayerTrace {
    fn record(&mut self, trace: &EditTrace, label: Label) {
        self.vectors += 1;
        if trace.classified == Some(Label::Negative) {
            self.classified_negative += 1;
        }
        if trace.edited {
            self.edited += 1;
            if label == Label::Negative {
                self.edited_negative_records += 1;
            }
        }
        if label == Label::Negative {
            self.negative_records += 1;
        }
        if trace.fallback {
            self.fallbacks += 1;
        }
        if let Some(g) = trace.gamma1 {
            self.gamma1.push(g);
        }
        if let Some(g) = trace.gamma2 {
            self.gamma2.push(g);
        }
    }

    fn merge(&mut self, o: &LayerTrace) {
        self.vectors += o.vectors;
        self.classified_negative += o.classified_negative;
        self.edited += o.edited;
        self.fallbacks += o.fallbacks;
        self.edited_negative_records += o.edited_negative_records;
        self.negative_records += o.negative_records;
        self.gamma1.merge(&o.gamma1);
        self.gamma2.merge(&o.gamma2);
    }
}

/// Counts aggregated over an [`edit_stream`] call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamTrace {
    pub total_vectors: u64,
    pub passed_through: u64,
    pub layers: BTreeMap<u32, LayerTrace>,
}

impl StreamTrace {
    pub fn edited(&self) -> u64 {
        self.layers.values().map(|l| l.edited).sum()
    }

    pub fn fallbacks(&self) -> u64 {
        self.layers.values().map(|l| l.fallbacks).sum()
    }

    /// Fraction of negative records in edited layers that were edited.
    pub fn edited_negative_fraction(&self) -> Option<f64> {
        let neg: u64 = self.layers.values().map(|l| l.negative_records).sum();
        let edited: u64 = self
            .layers
            .values()
            .map(|l| l.edited_negative_records)
            .sum();
        (neg > 0).then(|| edited as f64 / neg as f64)
    }
}

/// Run every record of a corpus through the bundle. Records of unselected
/// layers pass through untouched; the output keeps the input's order.
pub fn edit_stream<T: Scalar, E: LayerEdit<T>>(
    bundle: &Bundle<E>,
    corpus: &Corpus<T>,
) -> Result<(Corpus<T>, StreamTrace)> {
    check_dim(bundle.d, corpus.d)?;
    for e in bundle.layers.values() {
        check_dim(bundle.d, e.dim())?;
    }
    let selected: BTreeMap<u32, &E> = bundle
        .selected
        .iter()
        .map(|l| (*l, &bundle.layers[l]))
        .collect();
    // edited vector, plus the layer and trace when an editor ran
    type Edited<T> = (Vec<T>, Option<(u32, EditTrace)>);
    let results: Vec<Edited<T>> = corpus
        .records
        .par_iter()
        .map(|r| match selected.get(&r.layer_index) {
            Some(editor) => {
                let (v, t) = editor.edit(&r.vector)?;
                Ok((v, Some((r.layer_index, t))))
            }
            None => Ok((r.vector.clone(), None)),
        })
        .collect::<Result<_>>()?;

    let mut trace = StreamTrace::default();
    for l in &bundle.selected {
        trace.layers.insert(*l, LayerTrace::default());
    }
    let mut records = Vec::with_capacity(corpus.records.len());
    for (r, (vector, t)) in corpus.records.iter().zip(results) {
        trace.total_vectors += 1;
        match t {
            Some((layer, t)) => {
                let mut one = LayerTrace::default();
                one.record(&t, r.label);
                trace
                    .layers
                    .get_mut(&layer)
                    .expect("selected layer")
                    .merge(&one);
            }
            None => trace.passed_through += 1,
        }
        records.push(crate::data::ActivationRecord {
            vector,
            ..r.clone()
        });
    }
    Ok((
        Corpus {
            d: corpus.d,
            num_layers: corpus.num_layers,
            records,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, Angle};
    use crate::train::{Activation, DenseLayer, Mlp};
    use std::f64::consts::PI;

    /// Probe along +x; predictor with constant output angle.
    fn editor(angle: f64, mode: EditMode) -> LayerEditor<f64> {
        let probe = LinearProbe::new(vec![1.0, 0.0, 0.0], 0).unwrap();
        let s = angle / PI;
        let raw = (s / (1.0 - s)).ln();
        let head = DenseLayer::from_parts(vec![0.0; 3], vec![raw], 3, Activation::Sigmoid).unwrap();
        let predictor = AnglePredictor::new(Mlp::new(vec![head]).unwrap(), 0).unwrap();
        LayerEditor::new(probe, predictor, mode).unwrap()
    }

    #[test]
    fn positives_untouched_bitwise() {
        let e = editor(1.0, EditMode::Full);
        let a = [0.3, -2.0, 1.7];
        let (out, t) = e.edit_activation(&a).unwrap();
        assert_eq!(out, a.to_vec());
        assert!(!t.edited);
        assert_eq!(t.classified, Some(Label::Positive));
    }

    #[test]
    fn reflection_only_returns_mirror() {
        let e = editor(1.0, EditMode::ReflectionOnly);
        let a = [-1.0, 1.0, 0.0];
        let (out, t) = e.edit_activation(&a).unwrap();
        assert_eq!(out, vec![1.0, 1.0, 0.0]);
        let achieved = angle_between(&out, &a).unwrap().radians();
        assert!((achieved - t.gamma2.unwrap()).abs() < 1e-12);
        assert!((achieved - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn full_mode_rotates_by_predicted_angle() {
        let e = editor(1.2, EditMode::Full);
        let a = [-2.0, 0.5, 1.0];
        let (out, t) = e.edit_activation(&a).unwrap();
        assert!((t.gamma1.unwrap() - 1.2).abs() < 1e-9);
        assert!((angle_between(&out, &a).unwrap().radians() - 1.2).abs() < 1e-9);
        assert!((norm(&out) - norm(&a)).abs() < 1e-12 * norm(&a));
        // stays in span{a, e_x}: the z/y ratio is preserved
        assert!((out[2] / out[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_plane_falls_back() {
        // a parallel to the normal: Ha = -a, sin(gamma2) = 0
        let e = editor(1.0, EditMode::Full);
        let a = [-3.0, 0.0, 0.0];
        let (out, t) = e.edit_activation(&a).unwrap();
        assert_eq!(out, a.to_vec());
        assert!(t.fallback && !t.edited);
    }

    #[test]
    fn off_is_identity() {
        let e = editor(1.0, EditMode::Off);
        let a = [-3.0, 1.0, 0.0];
        assert_eq!(e.edit_activation(&a).unwrap().0, a.to_vec());
    }

    #[test]
    fn dimension_checked() {
        assert!(editor(1.0, EditMode::Full)
            .edit_activation(&[1.0, 2.0])
            .is_err());
    }

    #[test]
    fn selection_rules() {
        assert_eq!(
            select_layers(&[(0, 0.6), (1, 0.9), (2, 0.8)], 2).unwrap(),
            vec![1, 2]
        );
        assert_eq!(
            select_layers(&[(0, 0.6), (1, 0.9), (2, 0.8)], 3).unwrap(),
            vec![1, 2, 0]
        );
        assert_eq!(
            select_layers(&[(7, 0.8), (3, 0.8), (5, 0.1)], 1).unwrap(),
            vec![3]
        );
        assert!(select_layers(&[(0, 0.6)], 0).unwrap().is_empty());
        assert!(select_layers(&[(0, 0.6)], 2).is_err());
    }

    #[test]
    fn bundle_selection_must_exist() {
        let mut layers = BTreeMap::new();
        layers.insert(0, editor(1.0, EditMode::Full));
        assert!(Bundle::new(3, layers.clone(), vec![1], BundleMeta::default()).is_err());
        assert!(Bundle::new(3, layers.clone(), vec![0, 0], BundleMeta::default()).is_err());
        assert!(Bundle::new(3, layers, vec![0], BundleMeta::default()).is_ok());
    }

    #[test]
    fn angle_newtype_through_editor() {
        let e = editor(0.5, EditMode::Full);
        assert!((e.predictor.predict(&[0.0, 0.0, 0.0]).unwrap().radians() - 0.5).abs() < 1e-12);
        assert_eq!(Angle::clamped(-1.0), Angle::ZERO);
    }
}
