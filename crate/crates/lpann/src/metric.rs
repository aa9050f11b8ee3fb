//! l_p geometry: points, datasets, distances and bounded-instance checks.
//!
//! Points are plain coordinate slices; [`Dataset`] stores them row-major with
//! the l_p exponent attached. Every distance accumulates through a
//! compensated sum so results are reproducible across build configurations.

use thiserror::Error;

use crate::scalar::{KahanSum, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("non-finite coordinate at position {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty point: dimension must be >= 1")]
    EmptyPoint,
    #[error("l_p exponent must be >= {min}, got {got}")]
    InvalidExponent { min: f64, got: f64 },
    #[error("dataset needs at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("invalid bounded-instance parameter: {0}")]
    InvalidBoundedParams(&'static str),
}

/// `|t|^p`, dispatching small even integer exponents to repeated squaring.
/// The generic path goes through `exp(p * ln|t|)` with an exact zero case,
/// which sidesteps platform-dependent `pow` behavior at 0.
#[inline]
pub(crate) fn abs_pow<S: Scalar>(t: S, p: S) -> S {
    let a = t.abs();
    if a == S::zero() {
        return S::zero();
    }
    if p == S::from_config(2.0) {
        return a * a;
    }
    if p == S::from_config(4.0) {
        let s = a * a;
        return s * s;
    }
    if p == S::from_config(8.0) {
        let s = a * a;
        let q = s * s;
        return q * q;
    }
    if p == S::from_config(3.0) {
        return a * a * a;
    }
    if p == S::one() {
        return a;
    }
    (p * a.ln()).exp()
}

fn check_finite<S: Scalar>(x: &[S]) -> Result<(), MetricError> {
    if x.is_empty() {
        return Err(MetricError::EmptyPoint);
    }
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(MetricError::NonFinite(i)),
        None => Ok(()),
    }
}

/// l_p norm `(sum |x_i|^p)^(1/p)` for `p >= 1`.
pub fn lp_norm<S: Scalar>(x: &[S], p_exp: S) -> Result<S, MetricError> {
    check_finite(x)?;
    if p_exp < S::one() {
        return Err(MetricError::InvalidExponent {
            min: 1.0,
            got: p_exp.to_report(),
        });
    }
    Ok(lp_norm_unchecked(x, p_exp))
}

/// Norm without input validation; callers guarantee finite coordinates.
#[inline]
pub(crate) fn lp_norm_unchecked<S: Scalar>(x: &[S], p_exp: S) -> S {
    let mut acc = KahanSum::new();
    for &v in x {
        acc.add(abs_pow(v, p_exp));
    }
    acc.value().powf(p_exp.recip())
}

/// l_p distance `||x - y||_p`.
pub fn lp_distance<S: Scalar>(x: &[S], y: &[S], p_exp: S) -> Result<S, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    check_finite(x)?;
    check_finite(y)?;
    if p_exp < S::one() {
        return Err(MetricError::InvalidExponent {
            min: 1.0,
            got: p_exp.to_report(),
        });
    }
    Ok(lp_distance_unchecked(x, y, p_exp))
}

#[inline]
pub(crate) fn lp_distance_unchecked<S: Scalar>(x: &[S], y: &[S], p_exp: S) -> S {
    let mut acc = KahanSum::new();
    for (&a, &b) in x.iter().zip(y) {
        acc.add(abs_pow(a - b, p_exp));
    }
    acc.value().powf(p_exp.recip())
}

/// True iff `||x - y||_p <= radius`, with an early exit once the partial
/// power sum already exceeds `radius^p`. Exact: the partial sums are
/// monotone, so bailing out never changes the answer.
#[inline]
pub(crate) fn within_lp_ball<S: Scalar>(x: &[S], y: &[S], p_exp: S, radius: S) -> bool {
    let cap = abs_pow(radius, p_exp);
    let mut acc = KahanSum::new();
    for (&a, &b) in x.iter().zip(y) {
        acc.add(abs_pow(a - b, p_exp));
        if acc.value() > cap {
            return false;
        }
    }
    // Compare in distance space so the boundary convention matches
    // `lp_distance` exactly (d == radius is inside).
    acc.value().powf(p_exp.recip()) <= radius
}

/// Dense dataset of same-dimension points in `(R^d, l_p)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    data: Vec<S>,
    n: usize,
    dim: usize,
    p_exp: S,
}

impl<S: Scalar> Dataset<S> {
    /// Builds a dataset from owned rows. Requires `p_exp >= 2` (the index
    /// targets p > 2; p = 2 is kept as the identity sanity case).
    pub fn new(points: Vec<Vec<S>>, p_exp: S) -> Result<Self, MetricError> {
        if points.is_empty() {
            return Err(MetricError::TooFewPoints { need: 1, got: 0 });
        }
        let dim = points[0].len();
        let mut data = Vec::with_capacity(points.len() * dim);
        for row in &points {
            if row.len() != dim {
                return Err(MetricError::DimensionMismatch {
                    left: dim,
                    right: row.len(),
                });
            }
            check_finite(row)?;
            data.extend_from_slice(row);
        }
        Self::from_flat(data, points.len(), dim, p_exp)
    }

    /// Builds a dataset from a row-major buffer of length `n * dim`.
    pub fn from_flat(data: Vec<S>, n: usize, dim: usize, p_exp: S) -> Result<Self, MetricError> {
        if dim == 0 {
            return Err(MetricError::EmptyPoint);
        }
        if n == 0 || data.len() != n * dim {
            return Err(MetricError::TooFewPoints {
                need: n.max(1),
                got: data.len() / dim.max(1),
            });
        }
        if p_exp < S::from_config(2.0) {
            return Err(MetricError::InvalidExponent {
                min: 2.0,
                got: p_exp.to_report(),
            });
        }
        check_finite(&data)?;
        Ok(Self { data, n, dim, p_exp })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p_exp(&self) -> S {
        self.p_exp
    }

    pub fn point(&self, id: usize) -> &[S] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[S]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[S] {
        &self.data
    }

    /// Distance between two stored points.
    pub fn distance(&self, i: usize, j: usize) -> S {
        lp_distance_unchecked(self.point(i), self.point(j), self.p_exp)
    }

    /// Distance from a stored point to an external query.
    pub fn distance_to(&self, i: usize, q: &[S]) -> Result<S, MetricError> {
        if q.len() != self.dim {
            return Err(MetricError::DimensionMismatch {
                left: self.dim,
                right: q.len(),
            });
        }
        Ok(lp_distance_unchecked(self.point(i), q, self.p_exp))
    }
}

/// Parameters of the bounded search regime: near radius `r`, approximation
/// `c`, boundedness factor `beta`. All pairwise dataset distances are
/// supposed to lie in `[r, beta * c * r]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundedInstanceParams<S> {
    pub r: S,
    pub c: S,
    pub beta: S,
}

impl<S: Scalar> BoundedInstanceParams<S> {
    pub fn new(r: S, c: S, beta: S) -> Result<Self, MetricError> {
        if !(r > S::zero()) || !r.is_finite() {
            return Err(MetricError::InvalidBoundedParams("r must be > 0"));
        }
        if !(c > S::one()) || !c.is_finite() {
            return Err(MetricError::InvalidBoundedParams("c must be > 1"));
        }
        if !(beta >= S::one()) || !beta.is_finite() {
            return Err(MetricError::InvalidBoundedParams("beta must be >= 1"));
        }
        Ok(Self { r, c, beta })
    }

    pub fn far_radius(&self) -> S {
        self.beta * self.c * self.r
    }
}

/// Statistics over pairwise distances of a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseStats<S> {
    pub min: S,
    pub max: S,
    /// `sum over ordered pairs (i, j) of d(x_i, x_j)^2`; the i = j terms
    /// contribute 0, matching the double-sum convention used by the
    /// non-contraction checks.
    pub sum_sq: S,
}

/// Exact pairwise statistics. `include_self` adds the zero-distance i = j
/// pairs to min/max; `sum_sq` always covers all ordered pairs (i = j adds 0).
pub fn pairwise_distance_stats<S: Scalar>(
    ds: &Dataset<S>,
    include_self: bool,
) -> Result<PairwiseStats<S>, MetricError> {
    if ds.len() < 2 {
        return Err(MetricError::TooFewPoints {
            need: 2,
            got: ds.len(),
        });
    }
    let mut min = S::infinity();
    let mut max = S::zero();
    let mut sum_sq = KahanSum::new();
    for i in 0..ds.len() {
        for j in 0..ds.len() {
            if i == j {
                if include_self {
                    min = S::zero();
                }
                continue;
            }
            let d = ds.distance(i, j);
            if d < min {
                min = d;
            }
            if d > max {
                max = d;
            }
            sum_sq.add(d * d);
        }
    }
    Ok(PairwiseStats {
        min,
        max,
        sum_sq: sum_sq.value(),
    })
}

/// True iff every pair of distinct points satisfies
/// `r <= d <= beta * c * r` (both bounds inclusive).
pub fn is_beta_bounded<S: Scalar>(
    ds: &Dataset<S>,
    bp: &BoundedInstanceParams<S>,
) -> Result<bool, MetricError> {
    if ds.len() < 2 {
        return Err(MetricError::TooFewPoints {
            need: 2,
            got: ds.len(),
        });
    }
    let far = bp.far_radius();
    for i in 0..ds.len() {
        for j in (i + 1)..ds.len() {
            let d = ds.distance(i, j);
            if d < bp.r || d > far {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
