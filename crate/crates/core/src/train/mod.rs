// SPDX-License-Identifier: MIT OR Apache-2.0

//! Training machinery: dense layers with manual backprop, BCE, AdamW and a
//! warmup + cosine learning-rate schedule.

mod dense;
mod optim;

pub use dense::{sigmoid, Activation, DenseLayer, Mlp, MlpGrads, Tape};
pub use optim::{bce_loss, AdamW, AdamWConfig, LrSchedule, BCE_EPS};

use serde::{Deserialize, Serialize};

use crate::error::{HprError, Result};

/// Hyperparameters shared by every trainer in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Pairs per minibatch.
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub adamw: AdamWConfig,
    /// Hidden widths of the angle predictor (and the Diff baseline); `None`
    /// means `[d/4, d/16, 64]`.
    pub hidden: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            lr: 5e-4,
            warmup_fraction: 0.1,
            adamw: AdamWConfig::default(),
            hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HprError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(HprError::InvalidConfig(format!(
                "lr {} must be finite and >= 0",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(HprError::InvalidConfig(format!(
                "warmup_fraction {} outside [0, 1]",
                self.warmup_fraction
            )));
        }
        if let Some(h) = &self.hidden {
            if h.is_empty() || h.contains(&0) {
                return Err(HprError::InvalidConfig(format!(
                    "hidden widths {h:?} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Full width list `[d, hidden.., 1]`-style for a net with `out` outputs.
    pub fn widths(&self, d: usize, out: usize) -> Vec<usize> {
        let hidden = self
            .hidden
            .clone()
            .unwrap_or_else(|| vec![(d / 4).max(1), (d / 16).max(1), 64]);
        let mut w = Vec::with_capacity(hidden.len() + 2);
        w.push(d);
        w.extend(hidden);
        w.push(out);
        w
    }

    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size)
    }

    pub fn schedule(&self, examples: usize) -> Result<LrSchedule> {
        let total = (self.steps_per_epoch(examples) * self.epochs) as u64;
        LrSchedule::with_warmup_fraction(self.lr, self.warmup_fraction, total)
    }
}

/// Per-epoch mean losses recorded during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLoss>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub probe: f64,
    pub angle: f64,
    pub total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_widths_taper() {
        let c = TrainConfig::default();
        assert_eq!(c.widths(256, 1), vec![256, 64, 16, 64, 1]);
        assert_eq!(c.widths(2, 2), vec![2, 1, 1, 64, 2]);
    }

    #[test]
    fn defaults_match_reported_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr), (5, 16, 5e-4));
    }
}
