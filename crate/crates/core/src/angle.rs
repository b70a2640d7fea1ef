// SPDX-License-Identifier: MIT OR Apache-2.0

//! Angle prediction: a small MLP whose sigmoid output, scaled by π, gives
//! the rotation angle for an activation. Trained jointly with the probe.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::ActivationPair;
use crate::error::{check_dim, HprError, Result};
use crate::linalg::{angle_between, Angle};
use crate::probe::{pair_probe_loss_grad, LinearProbe};
use crate::scalar::Scalar;
use crate::seed;
use crate::train::{Activation, AdamW, EpochLoss, Mlp, MlpGrads, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq)]
pub struct AnglePredictor<T> {
    pub net: Mlp<T>,
    pub layer_index: u32,
}

impl<T: Scalar> AnglePredictor<T> {
    pub fn new(net: Mlp<T>, layer_index: u32) -> Result<Self> {
        let last = net.layers.last().expect("Mlp is nonempty");
        if net.output_dim() != 1 || last.activation != Activation::Sigmoid {
            return Err(HprError::Shape(
                "angle predictor needs a single sigmoid output unit".into(),
            ));
        }
        Ok(Self { net, layer_index })
    }

    pub fn init<R: Rng + ?Sized>(
        d: usize,
        layer_index: u32,
        config: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::init(
            &config.widths(d, 1),
            Activation::Relu,
            Activation::Sigmoid,
            rng,
        )?;
        Self::new(net, layer_index)
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    /// `π · σ(MLP(a))`.
    pub fn predict(&self, a: &[T]) -> Result<Angle> {
        let out = self.net.predict(a)?;
        Ok(Angle::clamped(PI * out[0]))
    }

    /// Mean absolute error against the true pair angle on the negatives.
    pub fn negative_mae(&self, pairs: &[ActivationPair<'_, T>]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(HprError::Empty("angle evaluation pairs"));
        }
        let mut total = 0.0;
        for p in pairs {
            let truth = pair_target(&p.positive.vector, &p.negative.vector)?;
            total += (self.predict(&p.negative.vector)?.radians() - truth).abs();
        }
        Ok(total / pairs.len() as f64)
    }
}

/// Training target for a pair: the angle between its two members.
pub fn pair_target<T: Scalar>(positive: &[T], negative: &[T]) -> Result<f64> {
    Ok(angle_between(positive, negative)?.radians())
}

/// Paired angle objective:
/// `(1/P) Σ [(f(a⁻) − ∠(a⁺, a⁻))² + f(a⁺)²]` with `f = π·σ(MLP(·))`.
///
/// When `grads` is given, parameter gradients (already scaled by `1/P`) are
/// accumulated into it.
pub fn angle_loss_grad<T: Scalar>(
    net: &Mlp<T>,
    pairs: &[(&[T], &[T])],
    mut grads: Option<&mut MlpGrads<T>>,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(HprError::Empty("angle batch"));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for (pos, neg) in pairs {
        check_dim(net.input_dim(), pos.len())?;
        check_dim(net.input_dim(), neg.len())?;
        let target = pair_target(pos, neg)?;
        for (a, goal) in [(neg, target), (pos, 0.0)] {
            let (out, tape) = net.forward(a)?;
            let err = PI * out[0] - goal;
            total += err * err;
            if let Some(g) = grads.as_deref_mut() {
                net.backward_into(&tape, &[2.0 * err * PI * scale], g)?;
            }
        }
    }
    Ok(total * scale)
}

pub fn angle_loss<T: Scalar>(
    predictor: &AnglePredictor<T>,
    pairs: &[ActivationPair<'_, T>],
) -> Result<f64> {
    let refs: Vec<(&[T], &[T])> = pairs
        .iter()
        .map(|p| (p.positive.vector.as_slice(), p.negative.vector.as_slice()))
        .collect();
    angle_loss_grad(&predictor.net, &refs, None)
}

/// Freshly initialized probe and predictor for a layer, from the seeded
/// substreams for `stream`.
pub fn init_layer_modules<T: Scalar>(
    d: usize,
    layer: u32,
    config: &TrainConfig,
    seed_value: u64,
    stream: u64,
) -> Result<(LinearProbe<T>, AnglePredictor<T>)> {
    let probe = LinearProbe::init(
        d,
        layer,
        &mut seed::substream(seed_value, seed::tag::PROBE_INIT, stream),
    );
    let predictor = AnglePredictor::init(
        d,
        layer,
        config,
        &mut seed::substream(seed_value, seed::tag::ANGLE_INIT, stream),
    )?;
    Ok((probe, predictor))
}

/// Minimize `L_probe + L_angle` over both modules with one AdamW instance.
///
/// Each minibatch holds `batch_size` pairs; pair order is reshuffled every
/// epoch from the `stream` substream.
pub fn joint_train<T: Scalar>(
    mut probe: LinearProbe<T>,
    mut predictor: AnglePredictor<T>,
    pairs: &[ActivationPair<'_, T>],
    config: &TrainConfig,
    seed_value: u64,
    stream: u64,
) -> Result<(LinearProbe<T>, AnglePredictor<T>, TrainLog)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(HprError::Empty("training pairs"));
    }
    check_dim(probe.dim(), predictor.dim())?;
    check_dim(probe.dim(), pairs[0].positive.vector.len())?;
    let mut shapes = vec![probe.dim()];
    shapes.extend(predictor.net.param_shapes());
    let mut opt = AdamW::new(&shapes, config.adamw);
    let schedule = config.schedule(pairs.len())?;
    let mut shuffle = seed::substream(seed_value, seed::tag::SHUFFLE, stream);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainLog::default();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let (mut sum_probe, mut sum_angle, mut batches) = (0.0, 0.0, 0usize);
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
            let mut probe_grad = vec![0.0; probe.dim()];
            let lp = pair_probe_loss_grad(&probe.theta, &batch, Some(&mut probe_grad))?;
            let mut net_grads = MlpGrads::zeros_like(&predictor.net);
            let la = angle_loss_grad(&predictor.net, &batch, Some(&mut net_grads))?;
            if !(lp + la).is_finite() {
                return Err(HprError::NonFiniteLoss {
                    epoch,
                    step: step as usize,
                });
            }
            let probe_grad: Vec<T> = probe_grad.into_iter().map(T::of).collect();
            let mut grad_refs: Vec<&[T]> = vec![probe_grad.as_slice()];
            grad_refs.extend(net_grads.slices());
            let mut params: Vec<&mut [T]> = vec![probe.theta.as_mut_slice()];
            params.extend(predictor.net.params_mut());
            opt.step(&mut params, &grad_refs, schedule.lr_at(step))?;
            step += 1;
            sum_probe += lp;
            sum_angle += la;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        log.epochs.push(EpochLoss {
            epoch,
            probe: sum_probe / n,
            angle: sum_angle / n,
            total: (sum_probe + sum_angle) / n,
        });
    }
    if !(probe.theta.iter().all(|x| x.is_finite()) && predictor.net.is_finite()) {
        return Err(HprError::NonFinite("trained parameters"));
    }
    Ok((probe, predictor, log))
}
