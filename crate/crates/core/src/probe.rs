// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bias-free linear probes. The probe weight is the normal of a separating
//! hyperplane through the origin and doubles as the Householder normal.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{ActivationPair, Label};
use crate::error::{check_dim, HprError, Result};
use crate::linalg::dot;
use crate::scalar::Scalar;
use crate::seed;
use crate::train::{bce_loss, sigmoid, AdamW, EpochLoss, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe<T> {
    pub theta: Vec<T>,
    pub layer_index: u32,
}

/// Decision rule: positive iff `score >= 0.5`.
pub fn classify_score(score: f64) -> Label {
    if score >= 0.5 {
        Label::Positive
    } else {
        Label::Negative
    }
}

impl<T: Scalar> LinearProbe<T> {
    pub fn new(theta: Vec<T>, layer_index: u32) -> Result<Self> {
        if theta.len() < 2 {
            return Err(HprError::InvalidConfig(
                "probe dimension must be >= 2".into(),
            ));
        }
        if !theta.iter().all(|x| x.is_finite()) {
            return Err(HprError::NonFinite("probe weight"));
        }
        Ok(Self { theta, layer_index })
    }

    /// Uniform init in `±sqrt(1/d)`.
    pub fn init<R: Rng + ?Sized>(d: usize, layer_index: u32, rng: &mut R) -> Self {
        let bound = (1.0 / d as f64).sqrt();
        Self {
            theta: (0..d)
                .map(|_| T::of(rng.random_range(-bound..=bound)))
                .collect(),
            layer_index,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn logit(&self, a: &[T]) -> Result<f64> {
        check_dim(self.dim(), a.len())?;
        Ok(dot(&self.theta, a))
    }

    /// `σ(θᵀa)`.
    pub fn score(&self, a: &[T]) -> Result<f64> {
        self.logit(a).map(sigmoid)
    }

    pub fn classify(&self, a: &[T]) -> Result<Label> {
        self.score(a).map(classify_score)
    }

    /// Mean BCE per labeled activation.
    pub fn loss(&self, batch: &[(&[T], Label)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(HprError::Empty("probe batch"));
        }
        let mut total = 0.0;
        for (a, label) in batch {
            total += bce_loss(self.score(a)?, label.is_positive()).0;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn accuracy(&self, items: &[(&[T], Label)]) -> Result<f64> {
        if items.is_empty() {
            return Err(HprError::Empty("probe evaluation set"));
        }
        let mut correct = 0usize;
        for (a, label) in items {
            if self.classify(a)? == *label {
                correct += 1;
            }
        }
        Ok(correct as f64 / items.len() as f64)
    }

    /// Accuracy over both members of every pair.
    pub fn pair_accuracy(&self, pairs: &[ActivationPair<'_, T>]) -> Result<f64> {
        let items: Vec<(&[T], Label)> = pairs
            .iter()
            .flat_map(|p| {
                [
                    (p.positive.vector.as_slice(), Label::Positive),
                    (p.negative.vector.as_slice(), Label::Negative),
                ]
            })
            .collect();
        self.accuracy(&items)
    }
}

/// Paired probe objective: `(1/P) Σ_pairs [BCE(σ(θᵀa⁺), 1) + BCE(σ(θᵀa⁻), 0)]`,
/// with its gradient in `θ` accumulated into `grad` (scaled by `1/P`).
pub fn pair_probe_loss_grad<T: Scalar>(
    theta: &[T],
    pairs: &[(&[T], &[T])],
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(HprError::Empty("probe batch"));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for (pos, neg) in pairs {
        for (a, label) in [(pos, true), (neg, false)] {
            check_dim(theta.len(), a.len())?;
            let p = sigmoid(dot(theta, a));
            let (l, dl_dp) = bce_loss(p, label);
            total += l;
            if let Some(g) = grad.as_deref_mut() {
                let dz = dl_dp * p * (1.0 - p) * scale;
                for (gi, &ai) in g.iter_mut().zip(a.iter()) {
                    *gi += dz * ai.wide();
                }
            }
        }
    }
    Ok(total * scale)
}

/// Train a probe alone on one layer's pairs (used for judges and accuracy curves).
pub fn train_probe<T: Scalar>(
    pairs: &[ActivationPair<'_, T>],
    config: &TrainConfig,
    seed_value: u64,
    stream: u64,
) -> Result<(LinearProbe<T>, TrainLog)> {
    config.validate()?;
    let first = pairs.first().ok_or(HprError::Empty("training pairs"))?;
    let d = first.positive.vector.len();
    let layer = first.positive.layer_index;
    let mut probe = LinearProbe::init(
        d,
        layer,
        &mut seed::substream(seed_value, seed::tag::PROBE_INIT, stream),
    );
    let mut shuffle = seed::substream(seed_value, seed::tag::SHUFFLE, stream);
    let schedule = config.schedule(pairs.len())?;
    let mut opt = AdamW::new(&[d], config.adamw);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainLog::default();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[T], &[T])> = chunk
                .iter()
                .map(|&i| {
                    (
                        pairs[i].positive.vector.as_slice(),
                        pairs[i].negative.vector.as_slice(),
                    )
                })
                .collect();
            let mut grad = vec![0.0; d];
            let loss = pair_probe_loss_grad(&probe.theta, &batch, Some(&mut grad))?;
            if !loss.is_finite() {
                return Err(HprError::NonFiniteLoss {
                    epoch,
                    step: step as usize,
                });
            }
            let grad_t: Vec<T> = grad.into_iter().map(T::of).collect();
            opt.step(
                &mut [probe.theta.as_mut_slice()],
                &[grad_t.as_slice()],
                schedule.lr_at(step),
            )?;
            step += 1;
            epoch_loss += loss;
            batches += 1;
        }
        let mean = epoch_loss / batches.max(1) as f64;
        log.epochs.push(EpochLoss {
            epoch,
            probe: mean,
            angle: 0.0,
            total: mean,
        });
    }
    Ok((probe, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn score_examples() {
        let p = LinearProbe::new(vec![1.0f64, -1.0], 0).unwrap();
        assert_abs_diff_eq!(
            p.score(&[2.0, 1.0]).unwrap(),
            0.7310585786300049,
            epsilon = 1e-12
        );
        assert_eq!(p.score(&[1.0, 1.0]).unwrap(), 0.5);
        assert!(p.score(&[1e3, -1e3]).unwrap() > 1.0 - 1e-12);
        assert!(p.score(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn tie_is_positive() {
        assert_eq!(classify_score(0.7), Label::Positive);
        assert_eq!(classify_score(0.3), Label::Negative);
        assert_eq!(classify_score(0.5), Label::Positive);
        let p = LinearProbe::new(vec![1.0f32, 0.0], 0).unwrap();
        assert_eq!(p.classify(&[0.0, 5.0]).unwrap(), Label::Positive);
    }

    #[test]
    fn zero_probe_loss_is_ln2() {
        let p = LinearProbe::new(vec![0.0f64; 3], 0).unwrap();
        let a = [1.0, 2.0, 3.0];
        let b = [-4.0, 0.5, 9.0];
        let loss = p
            .loss(&[
                (&a, Label::Positive),
                (&b, Label::Negative),
                (&a, Label::Negative),
            ])
            .unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(p.loss(&[]).is_err());
    }

    #[test]
    fn saturated_separation_loss_near_zero() {
        let p = LinearProbe::new(vec![10.0f64, 0.0], 0).unwrap();
        let loss = p
            .loss(&[
                (&[5.0, 1.0], Label::Positive),
                (&[-5.0, 1.0], Label::Negative),
            ])
            .unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn two_pair_hand_computation() {
        // θ = (1, 0); pairs ((1,0),(−1,0)) and ((0.5,0),(0.5,0)).
        // pair 1: −ln σ(1) − ln(1 − σ(−1)) = 2·ln(1 + e^{−1})
        // pair 2: −ln σ(0.5) − ln(1 − σ(0.5)) = ln(1 + e^{−0.5}) + ln(1 + e^{0.5})
        let theta = [1.0f64, 0.0];
        let pairs: [(&[f64], &[f64]); 2] =
            [(&[1.0, 0.0], &[-1.0, 0.0]), (&[0.5, 0.0], &[0.5, 0.0])];
        let expected = (2.0 * (1.0 + (-1.0f64).exp()).ln()
            + (1.0 + (-0.5f64).exp()).ln()
            + (1.0 + 0.5f64.exp()).ln())
            / 2.0;
        let loss = pair_probe_loss_grad(&theta, &pairs, None).unwrap();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 1.0373386717, epsilon = 1e-9);
    }

    #[test]
    fn accuracy_examples() {
        let p = LinearProbe::new(vec![1.0f64, 0.0], 0).unwrap();
        let a = [2.0, 0.0];
        let b = [-2.0, 0.0];
        assert_eq!(
            p.accuracy(&[(&a, Label::Positive), (&b, Label::Negative)])
                .unwrap(),
            1.0
        );
        assert_eq!(
            p.accuracy(&[(&a, Label::Negative), (&b, Label::Positive)])
                .unwrap(),
            0.0
        );
        assert!(p.accuracy(&[]).is_err());
    }
}
