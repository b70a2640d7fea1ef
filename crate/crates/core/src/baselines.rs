// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference editing methods: mass-mean-shift steering and a predictor of
//! the full difference vector.

use rand::seq::SliceRandom;

use crate::data::ActivationPair;
use crate::editor::{EditTrace, LayerEdit};
use crate::error::{check_dim, HprError, Result};
use crate::linalg::norm;
use crate::scalar::Scalar;
use crate::seed;
use crate::train::{Activation, AdamW, EpochLoss, Mlp, MlpGrads, TrainConfig, TrainLog};

/// Default steering strength.
pub const DEFAULT_ALPHA: f64 = 15.0;

/// Constant offset `alpha * direction` added to every activation.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector<T> {
    pub direction: Vec<T>,
    pub alpha: f64,
    pub layer_index: u32,
}

impl<T: Scalar> SteeringVector<T> {
    /// Normalizes `direction`.
    pub fn new(direction: &[T], alpha: f64, layer_index: u32) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(HprError::NonFinite("steering alpha"));
        }
        let n = norm(direction);
        if n == 0.0 {
            return Err(HprError::ZeroNorm);
        }
        Ok(Self {
            direction: direction.iter().map(|x| T::of(x.wide() / n)).collect(),
            alpha,
            layer_index,
        })
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    /// `a + alpha * direction`.
    pub fn steer(&self, a: &[T]) -> Result<Vec<T>> {
        check_dim(self.direction.len(), a.len())?;
        if self.alpha == 0.0 {
            // keeps the sign of negative zeros
            return Ok(a.to_vec());
        }
        Ok(a.iter()
            .zip(&self.direction)
            .map(|(&x, &u)| T::of(x.wide() + self.alpha * u.wide()))
            .collect())
    }
}

impl<T: Scalar> LayerEdit<T> for SteeringVector<T> {
    fn dim(&self) -> usize {
        self.direction.len()
    }

    fn edit(&self, a: &[T]) -> Result<(Vec<T>, EditTrace)> {
        let out = self.steer(a)?;
        let trace = EditTrace {
            edited: self.alpha != 0.0,
            ..EditTrace::untouched(None)
        };
        Ok((out, trace))
    }
}

/// Unit mass-mean shift `mean(a⁺) − mean(a⁻)` of one layer's pairs.
pub fn fit_steering<T: Scalar>(
    pairs: &[ActivationPair<'_, T>],
    alpha: f64,
) -> Result<SteeringVector<T>> {
    let first = pairs.first().ok_or(HprError::Empty("steering pairs"))?;
    let d = first.positive.vector.len();
    let mut shift = vec![0.0f64; d];
    for p in pairs {
        check_dim(d, p.positive.vector.len())?;
        check_dim(d, p.negative.vector.len())?;
        for (s, (&x, &y)) in shift
            .iter_mut()
            .zip(p.positive.vector.iter().zip(&p.negative.vector))
        {
            *s += x.wide() - y.wide();
        }
    }
    let n = pairs.len() as f64;
    shift.iter_mut().for_each(|s| *s /= n);
    // relative to the data scale, so float noise on identical means counts as zero
    let scale = pairs
        .iter()
        .map(|p| norm(&p.positive.vector).max(norm(&p.negative.vector)))
        .fold(0.0, f64::max);
    if norm(&shift) <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(HprError::ZeroNorm);
    }
    let shift: Vec<T> = shift.into_iter().map(T::of).collect();
    SteeringVector::new(&shift, alpha, first.positive.layer_index)
}

/// Network predicting `a⁺ − a` from `a`; the edit is `a + net(a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffPredictor<T> {
    pub net: Mlp<T>,
    pub layer_index: u32,
}

impl<T: Scalar> DiffPredictor<T> {
    pub fn new(net: Mlp<T>, layer_index: u32) -> Result<Self> {
        check_dim(net.input_dim(), net.output_dim())?;
        Ok(Self { net, layer_index })
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn apply(&self, a: &[T]) -> Result<Vec<T>> {
        let delta = self.net.predict(a)?;
        Ok(a.iter()
            .zip(delta)
            .map(|(&x, dx)| T::of(x.wide() + dx))
            .collect())
    }
}

impl<T: Scalar> LayerEdit<T> for DiffPredictor<T> {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn edit(&self, a: &[T]) -> Result<(Vec<T>, EditTrace)> {
        let out = self.apply(a)?;
        let trace = EditTrace {
            edited: true,
            ..EditTrace::untouched(None)
        };
        Ok((out, trace))
    }
}

/// `a + net(a)`.
pub fn apply_diff<T: Scalar>(a: &[T], m: &DiffPredictor<T>) -> Result<Vec<T>> {
    m.apply(a)
}

/// Mean squared error over every output component of both pair members:
/// negatives target `a⁺ − a⁻`, positives target zero.
pub fn diff_loss_grad<T: Scalar>(
    net: &Mlp<T>,
    pairs: &[(&[T], &[T])],
    mut grads: Option<&mut MlpGrads<T>>,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(HprError::Empty("diff batch"));
    }
    let d = net.output_dim();
    let scale = 1.0 / (2 * pairs.len() * d) as f64;
    let mut total = 0.0;
    let mut out_grad = vec![0.0; d];
    for (pos, neg) in pairs {
        check_dim(net.input_dim(), pos.len())?;
        check_dim(net.input_dim(), neg.len())?;
        for (a, toward_pos) in [(neg, true), (pos, false)] {
            let (out, tape) = net.forward(a)?;
            for i in 0..d {
                let target = if toward_pos {
                    pos[i].wide() - neg[i].wide()
                } else {
                    0.0
                };
                let err = out[i] - target;
                total += err * err;
                out_grad[i] = 2.0 * err * scale;
            }
            if let Some(g) = grads.as_deref_mut() {
                net.backward_into(&tape, &out_grad, g)?;
            }
        }
    }
    Ok(total * scale)
}

pub fn diff_loss<T: Scalar>(m: &DiffPredictor<T>, pairs: &[ActivationPair<'_, T>]) -> Result<f64> {
    let refs: Vec<(&[T], &[T])> = pairs
        .iter()
        .map(|p| (p.positive.vector.as_slice(), p.negative.vector.as_slice()))
        .collect();
    diff_loss_grad(&m.net, &refs, None)
}

/// Train a difference predictor with the same optimizer and schedule as
/// the HPR modules. Hidden widths follow the angle predictor's stack.
pub fn fit_diff<T: Scalar>(
    pairs: &[ActivationPair<'_, T>],
    config: &TrainConfig,
    seed_value: u64,
    stream: u64,
) -> Result<(DiffPredictor<T>, TrainLog)> {
    config.validate()?;
    let first = pairs
        .first()
        .ok_or(HprError::Empty("diff training pairs"))?;
    let d = first.positive.vector.len();
    let mut init = seed::substream(seed_value, seed::tag::DIFF, stream);
    let net = Mlp::init(
        &config.widths(d, d),
        Activation::Relu,
        Activation::Identity,
        &mut init,
    )?;
    let mut model = DiffPredictor::new(net, first.positive.layer_index)?;
    let mut opt = AdamW::new(&model.net.param_shapes(), config.adamw);
    let schedule = config.schedule(pairs.len())?;
    let mut shuffle = seed::substream(seed_value, seed::tag::DIFF_SHUFFLE, stream);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainLog::default();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let (mut sum, mut batches) = (0.0, 0usize);
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
            let mut grads = MlpGrads::zeros_like(&model.net);
            let loss = diff_loss_grad(&model.net, &batch, Some(&mut grads))?;
            if !loss.is_finite() {
                return Err(HprError::NonFiniteLoss {
                    epoch,
                    step: step as usize,
                });
            }
            let grad_refs = grads.slices();
            opt.step(
                &mut model.net.params_mut(),
                &grad_refs,
                schedule.lr_at(step),
            )?;
            step += 1;
            sum += loss;
            batches += 1;
        }
        let mean = sum / batches.max(1) as f64;
        log.epochs.push(EpochLoss {
            epoch,
            probe: 0.0,
            angle: 0.0,
            total: mean,
        });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ActivationRecord, Label};
    use crate::train::DenseLayer;

    fn rec(v: Vec<f64>, label: Label) -> ActivationRecord<f64> {
        ActivationRecord {
            sample_id: 0,
            token_index: 0,
            layer_index: 2,
            label,
            vector: v,
        }
    }

    #[test]
    fn steering_direction_from_axis_clouds() {
        let p = rec(vec![1.0, 0.0, 0.0], Label::Positive);
        let n = rec(vec![-1.0, 0.0, 0.0], Label::Negative);
        let pairs = vec![
            ActivationPair {
                positive: &p,
                negative: &n
            };
            3
        ];
        let s = fit_steering(&pairs, 15.0).unwrap();
        assert_eq!(s.direction, vec![1.0, 0.0, 0.0]);
        assert_eq!(s.layer_index, 2);
    }

    #[test]
    fn identical_means_rejected() {
        let a = rec(vec![1.0, 2.0], Label::Positive);
        let b = rec(vec![-1.0, 0.5], Label::Negative);
        let a2 = rec(vec![-1.0, 0.5], Label::Positive);
        let b2 = rec(vec![1.0, 2.0], Label::Negative);
        let pairs = [
            ActivationPair {
                positive: &a,
                negative: &b,
            },
            ActivationPair {
                positive: &a2,
                negative: &b2,
            },
        ];
        assert!(matches!(fit_steering(&pairs, 1.0), Err(HprError::ZeroNorm)));
        assert!(fit_steering::<f64>(&[], 1.0).is_err());
    }

    #[test]
    fn steer_examples() {
        let s = SteeringVector::<f64>::new(&[3.0, 4.0], 0.0, 0).unwrap();
        assert_eq!(s.steer(&[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
        let s = s.with_alpha(15.0);
        let out = s.steer(&[0.0, 0.0]).unwrap();
        assert!((norm(&out) - 15.0).abs() < 1e-12);
        assert!((out[0] - 9.0).abs() < 1e-12 && (out[1] - 12.0).abs() < 1e-12);
        assert!(s.steer(&[1.0]).is_err());
    }

    #[test]
    fn diff_hand_computation() {
        // single linear layer W = [[1, 0], [0, 2]], b = [0.5, -1]
        let layer = DenseLayer::from_parts(
            vec![1.0, 0.0, 0.0, 2.0],
            vec![0.5, -1.0],
            2,
            Activation::Identity,
        )
        .unwrap();
        let m = DiffPredictor::new(Mlp::new(vec![layer]).unwrap(), 0).unwrap();
        // a = (1, 3): net(a) = (1.5, 5) -> a + net(a) = (2.5, 8)
        assert_eq!(apply_diff(&[1.0, 3.0], &m).unwrap(), vec![2.5, 8.0]);
        // norm is not preserved
        assert!(norm(&[2.5, 8.0]) > norm(&[1.0, 3.0]));
    }

    #[test]
    fn zero_net_is_identity() {
        let layer = DenseLayer::<f64>::zeros(3, 3, Activation::Identity);
        let m = DiffPredictor::new(Mlp::new(vec![layer]).unwrap(), 0).unwrap();
        assert_eq!(
            apply_diff(&[1.0, -2.0, 0.25], &m).unwrap(),
            vec![1.0, -2.0, 0.25]
        );
    }

    #[test]
    fn diff_requires_square_net() {
        let layer = DenseLayer::<f64>::zeros(3, 2, Activation::Identity);
        assert!(DiffPredictor::new(Mlp::new(vec![layer]).unwrap(), 0).is_err());
    }

    #[test]
    fn diff_loss_hand_value() {
        // zero net: loss = mean of target² over both members and components
        let layer = DenseLayer::<f64>::zeros(2, 2, Activation::Identity);
        let net = Mlp::new(vec![layer]).unwrap();
        let pos = [1.0, 2.0];
        let neg = [0.0, 4.0];
        // negative target (1, -2): squares 1 + 4; positive target 0
        let loss = diff_loss_grad(&net, &[(&pos[..], &neg[..])], None).unwrap();
        assert!((loss - 5.0 / 4.0).abs() < 1e-12);
    }
}
