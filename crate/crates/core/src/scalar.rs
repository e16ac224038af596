//! Scalar arithmetic behind a single trait.
//!
//! All classical-probability code is generic over [`Scalar`] with two instances:
//!
//! - [`Rat`] (128-bit rationals): exact arithmetic, the default for every checker;
//!   equality is literal equality and tolerances are ignored.
//! - `f64`: opt-in floating point for throughput experiments; comparisons use an
//!   absolute tolerance supplied by the caller.
//!
//! The trait is deliberately small: probability bookkeeping needs addition,
//! multiplication, constants, and comparison — never division — so both instances stay
//! total.
//!
//! `Rat` is a fixed-width `Ratio<i128>` rather than a big-integer rational: values are
//! `Copy`, take no heap, and the channels materialised by the larger fixtures run tens
//! of millions of entries, where per-entry allocation is prohibitive. Numerators and
//! denominators beyond `i128` abort with an overflow panic instead of losing exactness;
//! the workspace profiles keep integer overflow checks on in every build.

use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational number with 128-bit numerator and denominator.
pub type Rat = Ratio<i128>;

/// Scalar values that probabilities are made of.
pub trait Scalar: Clone + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    /// Whether equality is exact (tolerances are ignored).
    const EXACT: bool;

    fn zero() -> Self;
    fn one() -> Self;
    /// The rational `num / den`. Panics if `den == 0`.
    fn from_ratio(num: i64, den: i64) -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    /// Best-effort conversion to `f64`, used for reporting deviations.
    fn to_f64(&self) -> f64;
    /// Equality up to `tol` (absolute). Exact scalars ignore `tol`.
    fn eq_tol(&self, other: &Self, tol: f64) -> bool;
    /// Whether the value is `>= -tol`. Exact scalars require `>= 0`.
    fn is_nonneg(&self, tol: f64) -> bool;
    /// Render for reports; rationals as `p/q`, floats in shortest form.
    fn render(&self) -> String;

    /// `|self - other|` as an `f64`, used to rank counterexamples.
    fn abs_diff(&self, other: &Self) -> f64 {
        (self.to_f64() - other.to_f64()).abs()
    }
}

impl Scalar for Rat {
    const EXACT: bool = true;

    fn zero() -> Self {
        <Rat as Zero>::zero()
    }

    fn one() -> Self {
        <Rat as One>::one()
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        Rat::new(i128::from(num), i128::from(den))
    }

    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn add(&self, other: &Self) -> Self {
        // Deterministic fixtures spend almost all additions on a zero accumulator;
        // skipping the general path avoids a pointless gcd reduction.
        if Zero::is_zero(self) {
            return *other;
        }
        if Zero::is_zero(other) {
            return *self;
        }
        self + other
    }

    fn mul(&self, other: &Self) -> Self {
        if One::is_one(self) {
            return *other;
        }
        if One::is_one(other) {
            return *self;
        }
        self * other
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn eq_tol(&self, other: &Self, _tol: f64) -> bool {
        self == other
    }

    fn is_nonneg(&self, _tol: f64) -> bool {
        !self.is_negative()
    }

    fn render(&self) -> String {
        if self.denom().is_one() {
            format!("{}", self.numer())
        } else {
            format!("{}/{}", self.numer(), self.denom())
        }
    }

    fn abs_diff(&self, other: &Self) -> f64 {
        ToPrimitive::to_f64(&(self - other).abs()).unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn zero() -> Self {
        0.0
    }

    fn one() -> Self {
        1.0
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        num as f64 / den as f64
    }

    fn is_zero(&self) -> bool {
        *self == 0.0
    }

    fn add(&self, other: &Self) -> Self {
        self + other
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn eq_tol(&self, other: &Self, tol: f64) -> bool {
        (self - other).abs() <= tol
    }

    fn is_nonneg(&self, tol: f64) -> bool {
        *self >= -tol
    }

    fn render(&self) -> String {
        format!("{self}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_arithmetic_is_exact() {
        let third = Rat::from_ratio(1, 3);
        let sum = third.add(&third).add(&third);
        assert!(sum.eq_tol(&<Rat as Scalar>::one(), 0.0));
        assert_eq!(third.render(), "1/3");
        assert_eq!(Rat::from_ratio(4, 2).render(), "2");
    }

    #[test]
    fn float_comparison_uses_tolerance() {
        let a = 0.1f64 + 0.2;
        assert!(a.eq_tol(&0.3, 1e-9));
        assert!(!a.eq_tol(&0.3, 0.0));
        assert!((-1e-12f64).is_nonneg(1e-9));
        assert!(!(-1e-3f64).is_nonneg(1e-9));
    }

    #[test]
    fn abs_diff_ranks_counterexamples() {
        let a = Rat::from_ratio(1, 2);
        let b = Rat::from_ratio(1, 4);
        assert!((a.abs_diff(&b) - 0.25).abs() < 1e-15);
    }
}
