// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-cone synthetic activations.
//!
//! Positives scatter around `axis_positive`, negatives around
//! `axis_negative`. A direction is `axis + noise` with isotropic Gaussian
//! noise of per-coordinate standard deviation `1 / concentration`, then
//! renormalized; the magnitude is `radius_mean * (1 + U(-jitter, jitter))`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ActivationRecord, Corpus, Label};
use crate::error::{check_dim, HprError, Result};
use crate::linalg::{dot, norm};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub axis_positive: Vec<f64>,
    pub axis_negative: Vec<f64>,
    /// Inverse per-coordinate noise scale; `f64::INFINITY` means noise-free.
    pub concentration: f64,
    pub radius_mean: f64,
    /// Relative half-width of the uniform magnitude jitter, in `[0, 1)`.
    pub radius_jitter: f64,
}

impl ConeSpec {
    /// Random unit axes separated by `separation` radians.
    pub fn random_axes<R: Rng + ?Sized>(
        d: usize,
        separation: f64,
        concentration: f64,
        radius_mean: f64,
        radius_jitter: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if d < 2 {
            return Err(HprError::InvalidConfig(format!(
                "dimension {d} must be at least 2"
            )));
        }
        let p = random_unit(d, rng);
        let mut w = random_unit(d, rng);
        let along = dot(&w, &p);
        for (wi, pi) in w.iter_mut().zip(&p) {
            *wi -= along * pi;
        }
        let nw = norm(&w);
        w.iter_mut().for_each(|x| *x /= nw);
        let (s, c) = separation.sin_cos();
        let n = p.iter().zip(&w).map(|(pi, wi)| c * pi + s * wi).collect();
        let spec = Self {
            axis_positive: p,
            axis_negative: n,
            concentration,
            radius_mean,
            radius_jitter,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.axis_positive.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.axis_positive.len(), self.axis_negative.len())?;
        if self.dim() < 2 {
            return Err(HprError::InvalidConfig(
                "cone axes need dimension >= 2".into(),
            ));
        }
        for axis in [&self.axis_positive, &self.axis_negative] {
            if (norm(axis) - 1.0).abs() > 1e-9 {
                return Err(HprError::InvalidConfig(
                    "cone axes must be unit vectors".into(),
                ));
            }
        }
        if self.concentration.is_nan() || self.concentration < 0.0 {
            return Err(HprError::InvalidConfig(format!(
                "concentration {} must be >= 0",
                self.concentration
            )));
        }
        if !(self.radius_mean.is_finite() && self.radius_mean > 0.0) {
            return Err(HprError::InvalidConfig(format!(
                "radius_mean {} must be > 0",
                self.radius_mean
            )));
        }
        if !(0.0..1.0).contains(&self.radius_jitter) {
            return Err(HprError::InvalidConfig(format!(
                "radius_jitter {} must lie in [0, 1)",
                self.radius_jitter
            )));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, axis: &[f64], rng: &mut R) -> Vec<f64> {
        let mut dir: Vec<f64> = if self.concentration == 0.0 {
            // pure noise: uniform on the sphere
            (0..axis.len())
                .map(|_| rng.sample(StandardNormal))
                .collect()
        } else if self.concentration.is_infinite() {
            axis.to_vec()
        } else {
            let sd = 1.0 / self.concentration;
            axis.iter()
                .map(|&a| a + sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let n = norm(&dir);
        let radius = if self.radius_jitter > 0.0 {
            self.radius_mean * (1.0 + rng.random_range(-self.radius_jitter..self.radius_jitter))
        } else {
            self.radius_mean
        };
        dir.iter_mut().for_each(|x| *x *= radius / n);
        dir
    }
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub n_samples: usize,
    /// Response tokens per sample for the positive answer.
    pub tokens_positive: u32,
    /// Response tokens per sample for the negative answer.
    pub tokens_negative: u32,
    pub seed: u64,
}

/// Generate a corpus with one [`ConeSpec`] per layer.
///
/// Records are ordered by sample, then layer, then label (positive first),
/// then token. Each layer draws from its own seeded substream.
pub fn generate_synthetic<T: Scalar>(
    specs: &[ConeSpec],
    opts: &GenerateOptions,
) -> Result<Corpus<T>> {
    if specs.is_empty() {
        return Err(HprError::InvalidConfig(
            "need at least one layer spec".into(),
        ));
    }
    if opts.n_samples == 0 {
        return Err(HprError::InvalidConfig("n_samples must be >= 1".into()));
    }
    let d = specs[0].dim();
    for s in specs {
        s.validate()?;
        check_dim(d, s.dim())?;
    }
    let mut rngs: Vec<_> = (0..specs.len())
        .map(|l| seed::substream(opts.seed, seed::tag::GENERATE, l as u64))
        .collect();
    let per_sample = (opts.tokens_positive + opts.tokens_negative) as usize * specs.len();
    let mut records = Vec::with_capacity(per_sample * opts.n_samples);
    for sample in 0..opts.n_samples as u64 {
        for (layer, (spec, rng)) in specs.iter().zip(rngs.iter_mut()).enumerate() {
            for (label, count, axis) in [
                (Label::Positive, opts.tokens_positive, &spec.axis_positive),
                (Label::Negative, opts.tokens_negative, &spec.axis_negative),
            ] {
                for token in 0..count {
                    let v = spec.draw(axis, rng);
                    records.push(ActivationRecord {
                        sample_id: sample,
                        token_index: token,
                        layer_index: layer as u32,
                        label,
                        vector: v.into_iter().map(T::of).collect(),
                    });
                }
            }
        }
    }
    Corpus::new(d, specs.len() as u32, records)
}

/// Parameters of a multi-layer two-cone corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub d: usize,
    pub num_layers: u32,
    pub n_samples: usize,
    pub tokens_positive: u32,
    pub tokens_negative: u32,
    /// Angle between the two cone axes, radians.
    pub separation: f64,
    pub concentration: f64,
    pub radius_mean: f64,
    pub radius_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 256,
            num_layers: 12,
            n_samples: 500,
            tokens_positive: 4,
            tokens_negative: 4,
            separation: std::f64::consts::FRAC_PI_3,
            concentration: 10.0,
            radius_mean: 100.0,
            radius_jitter: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// One spec per layer with axes drawn from the seed's axis substreams.
    pub fn specs(&self) -> Result<Vec<ConeSpec>> {
        if self.num_layers == 0 {
            return Err(HprError::InvalidConfig("num_layers must be >= 1".into()));
        }
        (0..self.num_layers)
            .map(|l| {
                let mut rng = seed::substream(self.seed, seed::tag::AXES, u64::from(l));
                ConeSpec::random_axes(
                    self.d,
                    self.separation,
                    self.concentration,
                    self.radius_mean,
                    self.radius_jitter,
                    &mut rng,
                )
            })
            .collect()
    }

    pub fn options(&self) -> GenerateOptions {
        GenerateOptions {
            n_samples: self.n_samples,
            tokens_positive: self.tokens_positive,
            tokens_negative: self.tokens_negative,
            seed: self.seed,
        }
    }

    pub fn generate<T: Scalar>(&self) -> Result<Corpus<T>> {
        generate_synthetic(&self.specs()?, &self.options())
    }
}
