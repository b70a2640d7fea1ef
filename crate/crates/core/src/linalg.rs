// SPDX-License-Identifier: MIT OR Apache-2.0

//! Vector geometry on the activation hypersphere.
//!
//! Everything here is a pure function over slices. Reductions accumulate in
//! `f64` even when the slices hold `f32`. The Householder reflection is
//! applied implicitly as a rank-1 update and never materialized as a matrix.

use std::f64::consts::PI;

use crate::error::{check_dim, HprError, Result};
use crate::scalar::Scalar;

/// Below this value of `sin(gamma2)` the rotation plane is considered undefined.
pub const PLANE_EPS: f64 = 1e-6;

/// Maximum relative norm difference accepted between `a` and its reflection.
pub const NORM_MATCH_TOL: f64 = 1e-4;

/// An angle in radians, restricted to `[0, pi]`.
#[derive(
    Debug, Clone, Copy, PartialEq, PartialOrd, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(transparent)]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);
    pub const PI: Angle = Angle(PI);

    pub fn new(radians: f64) -> Result<Self> {
        if radians.is_finite() && (0.0..=PI).contains(&radians) {
            Ok(Angle(radians))
        } else {
            Err(HprError::AngleRange(radians))
        }
    }

    /// Clamp into `[0, pi]`; NaN maps to zero.
    pub fn clamped(radians: f64) -> Self {
        if radians.is_nan() {
            Angle(0.0)
        } else {
            Angle(radians.clamp(0.0, PI))
        }
    }

    #[inline]
    pub fn radians(self) -> f64 {
        self.0
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.wide() * y.wide()).sum()
}

#[inline]
pub fn norm_sq<T: Scalar>(a: &[T]) -> f64 {
    a.iter().map(|&x| x.wide() * x.wide()).sum()
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> f64 {
    norm_sq(a).sqrt()
}

/// `a / ‖a‖`, or [`HprError::ZeroNorm`].
pub fn normalize<T: Scalar>(a: &[T]) -> Result<Vec<T>> {
    let n = norm(a);
    if !n.is_finite() {
        return Err(HprError::NonFinite("normalize"));
    }
    if n == 0.0 {
        return Err(HprError::ZeroNorm);
    }
    Ok(a.iter().map(|&x| T::of(x.wide() / n)).collect())
}

/// Angle between two nonzero vectors, in `[0, π]`.
///
/// Uses `2·atan2(‖â − b̂‖, ‖â + b̂‖)` on the unit vectors, which stays
/// accurate near `0` and `π` where `arccos` of the cosine loses digits.
pub fn angle_between<T: Scalar>(a: &[T], b: &[T]) -> Result<Angle> {
    check_dim(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if !(na.is_finite() && nb.is_finite()) {
        return Err(HprError::NonFinite("angle_between"));
    }
    if na == 0.0 || nb == 0.0 {
        return Err(HprError::ZeroNorm);
    }
    let (mut diff, mut sum) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (u, v) = (x.wide() / na, y.wide() / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok(Angle::clamped(2.0 * diff.sqrt().atan2(sum.sqrt())))
}

/// Reflect `a` about the hyperplane through the origin with the given normal:
/// `a - 2 (nᵀa / nᵀn) n`.
pub fn householder_reflect<T: Scalar>(a: &[T], normal: &[T]) -> Result<Vec<T>> {
    check_dim(normal.len(), a.len())?;
    let nn = norm_sq(normal);
    if !nn.is_finite() {
        return Err(HprError::NonFinite("householder normal"));
    }
    if nn == 0.0 {
        return Err(HprError::ZeroNorm);
    }
    let coef = 2.0 * dot(normal, a) / nn;
    Ok(a.iter()
        .zip(normal)
        .map(|(&x, &n)| T::of(x.wide() - coef * n.wide()))
        .collect())
}

fn check_rotation_inputs<T: Scalar>(a: &[T], a_dot: &[T]) -> Result<(f64, f64)> {
    check_dim(a.len(), a_dot.len())?;
    let na = norm(a);
    let nd = norm(a_dot);
    if !(na.is_finite() && nd.is_finite()) {
        return Err(HprError::NonFinite("rotation input"));
    }
    if na == 0.0 || nd == 0.0 {
        return Err(HprError::ZeroNorm);
    }
    let relative = (na - nd).abs() / na;
    if relative > NORM_MATCH_TOL {
        return Err(HprError::NormMismatch { relative });
    }
    Ok((na, nd))
}

/// Rotate `a` by `gamma1` inside the plane spanned by `a` and `a_dot`,
/// turning towards `a_dot`:
///
/// `â = sin(γ1)/sin(γ2) · ȧ + sin(γ2 − γ1)/sin(γ2) · a`, where `γ2 = ∠(ȧ, a)`.
///
/// Holds for `γ1` on either side of `γ2`. Fails with
/// [`HprError::DegeneratePlane`] when `sin(γ2) ≤` [`PLANE_EPS`].
pub fn rotate_in_plane<T: Scalar>(a: &[T], a_dot: &[T], gamma1: Angle) -> Result<Vec<T>> {
    check_rotation_inputs(a, a_dot)?;
    let gamma2 = angle_between(a_dot, a)?.radians();
    let sin2 = gamma2.sin();
    if sin2 <= PLANE_EPS {
        return Err(HprError::DegeneratePlane { sin_gamma2: sin2 });
    }
    let g1 = gamma1.radians();
    let beta_dot = g1.sin() / sin2;
    let beta_a = (gamma2 - g1).sin() / sin2;
    Ok(a.iter()
        .zip(a_dot)
        .map(|(&x, &y)| T::of(beta_dot * y.wide() + beta_a * x.wide()))
        .collect())
}

/// Reference rotation built from an explicit orthonormal basis of
/// `span{a, a_dot}` (Gram–Schmidt), used to cross-check [`rotate_in_plane`].
///
/// Returns `‖a‖ (cos γ1 · e1 + sin γ1 · e2)` with `e1 = a/‖a‖` and `e2`
/// oriented so `a_dot` has a positive `e2` coefficient.
pub fn rotation_oracle<T: Scalar>(a: &[T], a_dot: &[T], gamma1: Angle) -> Result<Vec<T>> {
    let (na, nd) = check_rotation_inputs(a, a_dot)?;
    let e1: Vec<f64> = a.iter().map(|&x| x.wide() / na).collect();
    let along: f64 = e1.iter().zip(a_dot).map(|(&e, &y)| e * y.wide()).sum();
    let w: Vec<f64> = a_dot
        .iter()
        .zip(&e1)
        .map(|(&y, &e)| y.wide() - along * e)
        .collect();
    let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sin2 = nw / nd;
    if sin2 <= PLANE_EPS {
        return Err(HprError::DegeneratePlane { sin_gamma2: sin2 });
    }
    let (s, c) = gamma1.radians().sin_cos();
    Ok(e1
        .iter()
        .zip(&w)
        .map(|(&u, &v)| T::of(na * (c * u + s * v / nw)))
        .collect())
}
