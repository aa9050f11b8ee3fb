//! Scalar abstraction over the floating point type used by the index.
//!
//! All geometry, embedding and hashing code is generic over [`Scalar`];
//! the crate root exposes `f64` aliases which the CLI and file formats use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StandardUniform};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// One standard normal draw from `rng`.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One uniform draw in `[0, 1)` from `rng`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless-enough conversion from `f64` for constants and file payloads.
    fn from_config(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every scalar type")
    }

    /// Conversion to `f64` for reports and file payloads.
    fn to_report(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardUniform.sample(rng)
    }
}

impl Scalar for f64 {
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardUniform.sample(rng)
    }
}

/// Compensated (Kahan) accumulator. Pairwise sums over large datasets must
/// not depend on the build configuration, so every distance and double-sum
/// in this crate funnels through this instead of a bare `+=`.
#[derive(Clone, Copy, Debug)]
pub struct KahanSum<S> {
    sum: S,
    carry: S,
}

impl<S: Scalar> Default for KahanSum<S> {
    fn default() -> Self {
        Self {
            sum: S::zero(),
            carry: S::zero(),
        }
    }
}

impl<S: Scalar> KahanSum<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: S) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> S {
        self.sum
    }
}
