//! p-stable (Gaussian) LSH for l_2: floor-of-projection hashing with an
//! analytic collision-probability curve, width calibration against a target
//! near-collision rate, and the scheme exponent rho.

use rand::Rng;
use thiserror::Error;

use crate::scalar::{KahanSum, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum LshError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("width calibration failed: {0}")]
    Calibration(&'static str),
    #[error("hash value not representable: non-finite projection")]
    NonFiniteProjection,
}

/// One hash `v -> floor((<a, v> + b) / W)` with `a` standard Gaussian and
/// `b` uniform in `[0, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LshFunction<S> {
    direction: Vec<S>,
    offset: S,
    width: S,
}

impl<S: Scalar> LshFunction<S> {
    pub fn from_parts(direction: Vec<S>, offset: S, width: S) -> Result<Self, LshError> {
        if !(width > S::zero()) || !width.is_finite() {
            return Err(LshError::InvalidParameter("width must be > 0"));
        }
        if !(offset >= S::zero() && offset < width) {
            return Err(LshError::InvalidParameter("offset must be in [0, width)"));
        }
        if direction.is_empty() || direction.iter().any(|v| !v.is_finite()) {
            return Err(LshError::InvalidParameter(
                "direction must be non-empty and finite",
            ));
        }
        Ok(Self {
            direction,
            offset,
            width,
        })
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn direction(&self) -> &[S] {
        &self.direction
    }

    pub fn offset(&self) -> S {
        self.offset
    }

    pub fn width(&self) -> S {
        self.width
    }

    /// Bucket id of `v`.
    pub fn hash(&self, v: &[S]) -> Result<i64, LshError> {
        if v.len() != self.direction.len() {
            return Err(LshError::DimensionMismatch {
                left: self.direction.len(),
                right: v.len(),
            });
        }
        let mut acc = KahanSum::new();
        for (&a, &x) in self.direction.iter().zip(v) {
            acc.add(a * x);
        }
        let bucket = ((acc.value() + self.offset) / self.width).floor();
        bucket.to_i64().ok_or(LshError::NonFiniteProjection)
    }
}

/// Samples one hash function: i.i.d. standard normal direction entries and
/// a uniform offset in `[0, W)`. Deterministic given the rng state.
pub fn sample_lsh<S: Scalar, R: Rng + ?Sized>(
    dim: usize,
    width: S,
    rng: &mut R,
) -> Result<LshFunction<S>, LshError> {
    if dim == 0 {
        return Err(LshError::InvalidParameter("dim must be >= 1"));
    }
    if !(width > S::zero()) || !width.is_finite() {
        return Err(LshError::InvalidParameter("width must be > 0"));
    }
    let direction: Vec<S> = (0..dim).map(|_| S::std_normal(rng)).collect();
    let offset = S::unit_uniform(rng) * width;
    LshFunction::from_parts(direction, offset, width)
}

/// Standard normal CDF via the complementary error function; libm's erfc
/// is good to ~1 ulp, well inside the 1e-12 absolute target.
fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Collision probability of the floor-of-projection family at bucket width
/// `W` for two points at l_2 distance `s`:
///
/// ```text
/// p(s) = 1 - 2 Phi(-W/s) - (2 s / (sqrt(2 pi) W)) (1 - exp(-W^2 / (2 s^2)))
/// ```
///
/// Equals 1 at `s = 0`, strictly decreases in `s`, increases in `W`.
pub fn collision_probability<S: Scalar>(width: S, dist: S) -> S {
    let w = width.to_report();
    let s = dist.to_report();
    assert!(w > 0.0, "width must be > 0");
    assert!(s >= 0.0, "distance must be >= 0");
    if s == 0.0 {
        return S::one();
    }
    let t = w / s;
    let p = 1.0 - 2.0 * normal_cdf(-t)
        - (2.0 / ((2.0 * std::f64::consts::PI).sqrt() * t)) * (1.0 - (-t * t / 2.0).exp());
    S::from_config(p.clamp(0.0, 1.0))
}

/// Monte-Carlo collision frequency for two points at distance `s`: draws a
/// fresh hash per trial and compares the buckets of `0` and `s` along the
/// projection axis (the projection of a Gaussian direction onto the
/// difference vector is 1-dimensional Gaussian, so one coordinate suffices).
pub fn collision_frequency_mc<S: Scalar, R: Rng + ?Sized>(
    width: S,
    dist: S,
    trials: usize,
    rng: &mut R,
) -> S {
    let mut hits = 0usize;
    for _ in 0..trials {
        let h = sample_lsh::<S, R>(1, width, rng).expect("valid width");
        let a = h.hash(&[S::zero()]).unwrap();
        let b = h.hash(&[dist]).unwrap();
        if a == b {
            hits += 1;
        }
    }
    S::from_usize(hits).unwrap() / S::from_usize(trials).unwrap()
}

/// Finds `W` with `collision_probability(W, near_r) = target_p1` by
/// bisection on the monotone curve, to 1e-9 absolute in probability.
/// Bracket: `[1e-6, 1e6] * near_r`.
pub fn calibrate_width<S: Scalar>(near_r: S, target_p1: S) -> Result<S, LshError> {
    let r = near_r.to_report();
    let target = target_p1.to_report();
    if !(r > 0.0) || !r.is_finite() {
        return Err(LshError::InvalidParameter("near_r must be > 0"));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(LshError::InvalidParameter("target_p1 must be in (0, 1)"));
    }
    let mut lo = 1e-6 * r;
    let mut hi = 1e6 * r;
    let p_at = |w: f64| collision_probability(w, r);
    if p_at(lo) > target {
        return Err(LshError::Calibration("target below bracket"));
    }
    if p_at(hi) < target {
        return Err(LshError::Calibration("target above bracket"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = p_at(mid);
        if (p - target).abs() <= 1e-9 {
            return Ok(S::from_config(mid));
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(S::from_config(0.5 * (lo + hi)))
}

/// Derived parameters of one calibrated hash family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LshParams<S> {
    pub p1: S,
    pub p2: S,
    pub near_r: S,
    pub far_cr: S,
    pub rho: S,
    pub width: S,
}

impl<S: Scalar> LshParams<S> {
    /// Builds the parameter record for a width `W` at near/far distances,
    /// reading `p1`/`p2` off the analytic curve.
    pub fn for_width(width: S, near_r: S, far_cr: S) -> Result<Self, LshError> {
        if !(near_r > S::zero() && far_cr > near_r) {
            return Err(LshError::InvalidParameter("need 0 < near_r < far_cr"));
        }
        let p1 = collision_probability(width, near_r);
        let p2 = collision_probability(width, far_cr);
        let rho = lsh_exponent(p1, p2)?;
        Ok(Self {
            p1,
            p2,
            near_r,
            far_cr,
            rho,
            width,
        })
    }
}

/// The LSH exponent `rho = ln(1/p1) / ln(1/p2)`, requires `0 < p2 < p1 < 1`.
pub fn lsh_exponent<S: Scalar>(p1: S, p2: S) -> Result<S, LshError> {
    if !(p2 > S::zero() && p1 < S::one() && p2 < p1) {
        return Err(LshError::InvalidParameter("need 0 < p2 < p1 < 1"));
    }
    Ok(p1.recip().ln() / p2.recip().ln())
}
