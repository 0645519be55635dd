//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type the model is evaluated in. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self;

    /// Widening conversion used at API edges (random sampling, text output).
    fn as_f64(self) -> f64;

    /// Floor applied to intensities before any logarithm.
    fn log_floor() -> Self {
        Self::of(1e-12)
    }

    /// `ln(max(self, 1e-12))`.
    fn floored_ln(self) -> Self {
        self.max(Self::log_floor()).ln()
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Neumaier-compensated running sum.
///
/// Reductions over events and samples go through this so that the result does
/// not depend on summation order beyond rounding of the compensation term.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum<F> {
    sum: F,
    carry: F,
}

impl<F: Scalar> CompensatedSum<F> {
    pub fn new() -> Self {
        Self {
            sum: F::zero(),
            carry: F::zero(),
        }
    }

    pub fn add(&mut self, x: F) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry = self.carry + ((self.sum - t) + x);
        } else {
            self.carry = self.carry + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    pub fn value(&self) -> F {
        self.sum + self.carry
    }
}

impl<F: Scalar> FromIterator<F> for CompensatedSum<F> {
    fn from_iter<I: IntoIterator<Item = F>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator.
pub fn ksum<F: Scalar, I: IntoIterator<Item = F>>(iter: I) -> F {
    iter.into_iter().collect::<CompensatedSum<F>>().value()
}

/// Stable log-sum-exp normalisation of log-weights into probabilities.
pub fn normalize_log_weights<F: Scalar>(log_w: &[F]) -> Vec<F> {
    let max = log_w
        .iter()
        .copied()
        .fold(F::neg_infinity(), |a, b| a.max(b));
    if !max.is_finite() {
        let k = F::of(log_w.len() as f64);
        return vec![F::one() / k; log_w.len()];
    }
    let w: Vec<F> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let z = ksum(w.iter().copied());
    w.into_iter().map(|x| x / z).collect()
}
