//! The Abelian Lie group ℝ⁺×U(1) acting on polar complex values.
//!
//! Points are stored as `(r, θ)` with `r ≥ EPS_R` and `θ ∈ [-π, π)`. The
//! tangent space at the identity is ℝ² with coordinates `(ln r, θ)`; every
//! operation here (mean, distance, action) is an ordinary Euclidean operation
//! in those coordinates, with the angular coordinate treated on the circle.

use std::f64::consts::PI;

use crate::dsp::Complex;
use crate::error::{Error, Result};

/// Radial clamp keeping points on ℝ⁺.
pub const EPS_R: f64 = 1e-12;
/// Resultant length below which a circular mean is undefined.
pub const EPS_RES: f64 = 1e-9;
/// Smoothing added under the square root of the distance used in training.
pub const EPS_DIST: f64 = 1e-12;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for inputs just below a multiple.
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldPoint {
    r: f64,
    theta: f64,
}

impl ManifoldPoint {
    /// Builds a point, clamping the radius and wrapping the angle.
    pub fn new(r: f64, theta: f64) -> Self {
        Self {
            r: r.max(EPS_R),
            theta: wrap_angle(theta),
        }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn to_complex(&self) -> Complex {
        Complex::from_polar(self.r, self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub log_r: f64,
    pub theta: f64,
}

/// Scaling by `rho` and rotation by `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElement {
    rho: f64,
    phi: f64,
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement { rho: 1.0, phi: 0.0 };

    pub fn new(rho: f64, phi: f64) -> Self {
        Self {
            rho: rho.max(EPS_R),
            phi,
        }
    }

    /// The element acting on a bin like multiplication by `z`.
    pub fn from_complex(z: Complex) -> Self {
        Self::new(z.norm(), z.arg())
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement::new(self.rho * other.rho, wrap_angle(self.phi + other.phi))
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement::new(1.0 / self.rho, wrap_angle(-self.phi))
    }
}

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexWeights(Vec<f64>);

impl ConvexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Size("convex weights must be non-empty".into()));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Argument("convex weights must be finite and non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!("convex weights sum to {sum}, expected 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Size("convex weights must be non-empty".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    /// Softmax of unconstrained logits; always convex.
    pub fn softmax(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn from_complex(z: Complex) -> ManifoldPoint {
    let r = z.norm();
    if r < EPS_R {
        ManifoldPoint { r: EPS_R, theta: 0.0 }
    } else {
        ManifoldPoint::new(r, z.im.atan2(z.re))
    }
}

pub fn log_map(p: &ManifoldPoint) -> TangentVector {
    TangentVector {
        log_r: p.r.ln(),
        theta: p.theta,
    }
}

pub fn exp_map(v: &TangentVector) -> ManifoldPoint {
    ManifoldPoint::new(v.log_r.exp(), v.theta)
}

pub fn act(g: &GroupElement, p: &ManifoldPoint) -> ManifoldPoint {
    ManifoldPoint::new(g.rho * p.r, g.phi + p.theta)
}

/// Result of a weighted Fréchet mean. `degenerate` marks a vanishing angular
/// resultant, in which case the angle is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mean {
    pub point: ManifoldPoint,
    pub degenerate: bool,
}

/// Closed-form weighted Fréchet mean: geometric mean of radii and the
/// direction of the weighted angular resultant.
pub fn wfm(points: &[ManifoldPoint], weights: &ConvexWeights) -> Result<Mean> {
    if points.is_empty() {
        return Err(Error::Size("weighted mean of an empty point set".into()));
    }
    if points.len() != weights.len() {
        return Err(Error::Size(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    let (mut log_r, mut s, mut c) = (0.0, 0.0, 0.0);
    for (p, &w) in points.iter().zip(weights.as_slice()) {
        log_r += w * p.r.ln();
        s += w * p.theta.sin();
        c += w * p.theta.cos();
    }
    let degenerate = s.hypot(c) < EPS_RES;
    let theta = if degenerate { 0.0 } else { s.atan2(c) };
    Ok(Mean {
        point: ManifoldPoint::new(log_r.exp(), theta),
        degenerate,
    })
}

/// Geodesic angular separation in `[0, π]`.
pub fn angular_difference(a: f64, b: f64) -> f64 {
    // Subtracting in a fixed order keeps the result exactly symmetric.
    let d = if a <= b { b - a } else { a - b };
    wrap_angle(d).abs()
}

/// `√(ln²(q.r/p.r) + Δθ²)` with `Δθ` the geodesic angular difference, so the
/// value is unaffected by where the branch cut falls.
pub fn distance(p: &ManifoldPoint, q: &ManifoldPoint) -> f64 {
    let dr = q.r.ln() - p.r.ln();
    let dth = angular_difference(p.theta, q.theta);
    (dr * dr + dth * dth).sqrt()
}

/// `distance` with `EPS_DIST` under the root; differentiable at `p = q`.
pub fn distance_smooth(p: &ManifoldPoint, q: &ManifoldPoint) -> f64 {
    let dr = q.r.ln() - p.r.ln();
    let dth = angular_difference(p.theta, q.theta);
    (dr * dr + dth * dth + EPS_DIST).sqrt()
}
