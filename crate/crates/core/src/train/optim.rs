// SPDX-License-Identifier: MIT OR Apache-2.0

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{HprError, Result};
use crate::scalar::Scalar;

/// Probability clamp applied before taking logarithms in [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Binary cross entropy of probability `p` against `label`, with its
/// derivative in `p`.
///
/// `p` is clamped to `[BCE_EPS, 1 - BCE_EPS]`; the derivative is evaluated
/// at the clamped point so saturated mistakes still receive a gradient.
pub fn bce_loss(p: f64, label: bool) -> (f64, f64) {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label {
        (-p.ln(), -1.0 / p)
    } else {
        (-(1.0 - p).ln(), 1.0 / (1.0 - p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW moment accumulators for a fixed list of parameter groups.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(shapes: &[usize], config: AdamWConfig) -> Self {
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One decoupled-weight-decay Adam update.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [&mut [T]],
        grads: &[&[T]],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(HprError::Shape(format!(
                "optimizer holds {} groups, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(HprError::Shape(format!(
                    "group {i}: expected {} entries, params {} grads {}",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j].wide();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mut x = p[j].wide();
                x -= lr * weight_decay * x;
                x -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                p[j] = T::of(x);
            }
        }
        Ok(())
    }
}

/// Linear warmup followed by cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if warmup_steps > total_steps || base_lr.is_nan() || base_lr < 0.0 || !base_lr.is_finite() {
            return Err(HprError::InvalidConfig(format!(
                "schedule needs 0 <= warmup ({warmup_steps}) <= total ({total_steps}) and finite lr >= 0 ({base_lr})"
            )));
        }
        Ok(Self {
            base_lr,
            warmup_steps,
            total_steps,
        })
    }

    /// Warmup length as a fraction of the total, rounded down.
    pub fn with_warmup_fraction(base_lr: f64, fraction: f64, total_steps: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(HprError::InvalidConfig(format!(
                "warmup fraction {fraction} outside [0, 1]"
            )));
        }
        Self::new(
            base_lr,
            (fraction * total_steps as f64).floor() as u64,
            total_steps,
        )
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let decay = self.total_steps - self.warmup_steps;
        if decay == 0 {
            return self.base_lr;
        }
        let progress = (step - self.warmup_steps) as f64 / decay as f64;
        (0.5 * self.base_lr * (1.0 + (PI * progress).cos())).max(0.0)
    }
}
