// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense layers and small feedforward stacks with hand-written backprop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, HprError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `y = act(W x + b)`; `weights` is row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            weights: vec![T::zero(); input_dim * output_dim],
            bias: vec![T::zero(); output_dim],
            input_dim,
            output_dim,
            activation,
        }
    }

    /// Uniform init in `±sqrt(1/fan_in)` for weights and bias.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / input_dim as f64).sqrt();
        let mut draw = || T::of(rng.random_range(-bound..=bound));
        let weights = (0..input_dim * output_dim).map(|_| draw()).collect();
        let bias = (0..output_dim).map(|_| draw()).collect();
        Self {
            weights,
            bias,
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn from_parts(
        weights: Vec<T>,
        bias: Vec<T>,
        input_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let output_dim = bias.len();
        if weights.len() != input_dim * output_dim {
            return Err(HprError::Shape(format!(
                "weights have {} entries, expected {}x{}",
                weights.len(),
                output_dim,
                input_dim
            )));
        }
        let layer = Self {
            weights,
            bias,
            input_dim,
            output_dim,
            activation,
        };
        if !layer.is_finite() {
            return Err(HprError::NonFinite("dense layer parameters"));
        }
        Ok(layer)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|x| x.is_finite())
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn pre_activation(&self, x: &[T]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.input_dim)
            .zip(&self.bias)
            .map(|(row, &b)| {
                b.wide()
                    + row
                        .iter()
                        .zip(x)
                        .map(|(&w, &xi)| w.wide() * xi.wide())
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Cached intermediates from one [`Mlp::forward`] call.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    /// Input seen by each layer.
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl<T> Tape<T> {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradient buffers mirroring an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.input_dim, l.output_dim, l.activation))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for x in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *x = T::of(x.wide() * factor);
            }
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

/// Feedforward stack of [`DenseLayer`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(HprError::Empty("network layers"));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].output_dim, pair[1].input_dim)?;
        }
        Ok(Self { layers })
    }

    /// Build from `widths = [in, h1, ..., out]`: hidden layers use `hidden`,
    /// the final layer uses `output`.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(HprError::InvalidConfig(format!(
                "network widths {widths:?} need at least two positive entries"
            )));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect()
    }

    /// Output only, without keeping a tape.
    pub fn predict(&self, x: &[T]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut cur: Vec<T> = x.to_vec();
        let mut out = Vec::new();
        for layer in &self.layers {
            out = layer
                .pre_activation(&cur)
                .into_iter()
                .map(|z| layer.activation.apply(z))
                .collect();
            cur = out.iter().map(|&v| T::of(v)).collect();
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<f64>, Tape<T>)> {
        check_dim(self.input_dim(), x.len())?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut cur: Vec<T> = x.to_vec();
        for layer in &self.layers {
            let pre = layer.pre_activation(&cur);
            let post: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
            let next = post.iter().map(|&v| T::of(v)).collect();
            tape.inputs.push(std::mem::replace(&mut cur, next));
            tape.pre.push(pre);
            tape.post.push(post);
        }
        Ok((tape.output().to_vec(), tape))
    }

    fn check_tape(&self, tape: &Tape<T>) -> Result<()> {
        let ok = tape.inputs.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(&tape.inputs)
                .zip(&tape.pre)
                .all(|((l, inp), pre)| inp.len() == l.input_dim && pre.len() == l.output_dim);
        if ok {
            Ok(())
        } else {
            Err(HprError::Shape("tape does not match network".into()))
        }
    }

    /// Accumulate parameter gradients into `grads` and return `dL/dx`.
    pub fn backward_into(
        &self,
        tape: &Tape<T>,
        output_grad: &[f64],
        grads: &mut MlpGrads<T>,
    ) -> Result<Vec<f64>> {
        self.check_tape(tape)?;
        check_dim(self.output_dim(), output_grad.len())?;
        if grads.layers.len() != self.layers.len() {
            return Err(HprError::Shape(
                "gradient buffer does not match network".into(),
            ));
        }
        let mut upstream = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&tape.pre[i])
                .zip(&tape.post[i])
                .map(|((&g, &z), &y)| g * layer.activation.derivative(z, y))
                .collect();
            let input = &tape.inputs[i];
            let g = &mut grads.layers[i];
            for (o, &dz) in delta.iter().enumerate() {
                g.bias[o] += T::of(dz);
                if dz != 0.0 {
                    let row = &mut g.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for (w, &xi) in row.iter_mut().zip(input) {
                        *w += T::of(dz * xi.wide());
                    }
                }
            }
            let mut down = vec![0.0; layer.input_dim];
            for (o, &dz) in delta.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                for (d, &w) in down.iter_mut().zip(row) {
                    *d += dz * w.wide();
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    /// Fresh gradients for a single example.
    pub fn backward(&self, tape: &Tape<T>, output_grad: &[f64]) -> Result<MlpGrads<T>> {
        let mut grads = MlpGrads::zeros_like(self);
        self.backward_into(tape, output_grad, &mut grads)?;
        Ok(grads)
    }
}
