// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use hpr_core::baselines::DEFAULT_ALPHA;
use hpr_core::data::SynthConfig;
use hpr_core::{EditMode, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Full,
    ReflectionOnly,
    Steer,
    Diff,
    Off,
}

impl Mode {
    pub fn hpr(self) -> Option<EditMode> {
        match self {
            Mode::Full => Some(EditMode::Full),
            Mode::ReflectionOnly => Some(EditMode::ReflectionOnly),
            Mode::Off => Some(EditMode::Off),
            Mode::Steer | Mode::Diff => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.to_possible_value().expect("no skipped variants");
        f.write_str(name.get_name())
    }
}

/// Every knob a command reads. Missing keys in a config file keep their
/// built-in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream.
    pub seed: u64,
    /// Float width of generated corpora.
    pub precision: Precision,
    /// Train / validation / test fractions of the samples.
    pub split: [f64; 3],
    /// Layers edited by a trained bundle.
    pub k: usize,
    /// Restrict training and analysis to these layers.
    pub layers: Option<Vec<u32>>,
    pub mode: Mode,
    /// Steering strength for trained steering bundles and `steer` edits.
    pub alpha: f64,
    /// Steering strengths compared by `sweep`.
    pub alphas: Vec<f64>,
    /// Layer counts compared by `sweep`.
    pub ks: Vec<usize>,
    /// Train steering and difference baselines next to the HPR bundle.
    pub baselines: bool,
    /// Report norms on a log10 scale.
    pub log10: bool,
    pub data: SynthConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            split: [0.45, 0.05, 0.5],
            k: 5,
            layers: None,
            mode: Mode::Full,
            alpha: DEFAULT_ALPHA,
            alphas: vec![DEFAULT_ALPHA],
            ks: vec![1, 3, 5],
            baselines: true,
            log10: false,
            data: SynthConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.split.iter().any(|r| !(r.is_finite() && *r >= 0.0))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            bail!("split {:?} must be non-negative and sum to 1", self.split);
        }
        if !self.alpha.is_finite() || self.alphas.iter().any(|a| !a.is_finite()) {
            bail!("steering strengths must be finite");
        }
        if matches!(&self.layers, Some(l) if l.is_empty()) {
            bail!("layer list is empty");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 4\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.k, 5);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            layers: Some(vec![1, 3]),
            mode: Mode::ReflectionOnly,
            ..RunConfig::default()
        };
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
    }

    #[test]
    fn bad_split_rejected() {
        let c = RunConfig {
            split: [0.5, 0.5, 0.5],
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
