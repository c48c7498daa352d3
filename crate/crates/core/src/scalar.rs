//! Numeric abstractions.
//!
//! Two families of scalars are used across the crate:
//!
//! * [`Scalar`]: anything with exact-or-float field arithmetic. Cone fans and
//!   2D orientation predicates are generic over it, so the same code runs on
//!   `f64` and on exact rationals (`Rational64`).
//! * [`Real`]: floating-point types (`f32`, `f64`) used for everything that
//!   integrates, interpolates, or takes transcendental functions.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_rational::Rational64;
use num_traits::{Float, FloatConst, FromPrimitive, Num, NumAssign, ToPrimitive, Zero};

/// Field arithmetic that may be exact.
pub trait Scalar:
    Num + Clone + PartialOrd + Debug + Display + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// `true` when arithmetic on this type is exact (no rounding).
    const EXACT: bool;

    /// `a*d - b*c`, the 2x2 determinant `det([a b; c d])`.
    ///
    /// Float implementations use an error-free transformation so the sign is
    /// correct whenever the exact value is not within a couple of ulps of 0.
    fn det2(a: &Self, b: &Self, c: &Self, d: &Self) -> Self {
        a.clone() * d.clone() - b.clone() * c.clone()
    }

    /// Whether `value` is zero relative to `scale`. Exact types test `== 0`.
    fn negligible(value: &Self, scale: &Self) -> bool;

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const EXACT: bool = false;

            fn det2(a: &Self, b: &Self, c: &Self, d: &Self) -> Self {
                // Kahan's 2x2 determinant: w = b*c exactly split via fma.
                let w = b * c;
                let e = (-b).mul_add(*c, w);
                let f = a.mul_add(*d, -w);
                f + e
            }

            fn negligible(value: &Self, scale: &Self) -> bool {
                value.abs() <= 64.0 * <$t>::EPSILON * scale.abs().max(<$t>::MIN_POSITIVE)
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

impl Scalar for Rational64 {
    const EXACT: bool = true;

    fn negligible(value: &Self, _scale: &Self) -> bool {
        value.is_zero()
    }
}

/// Floating-point scalar used by the continuous algorithms.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + NumAssign
        + Sum
        + Default
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in target float type")
}

/// Converts a `T` back to `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Euclidean norm.
pub fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_det_sign_on_nearly_singular_input() {
        // a*d and b*c agree to ~1e-16 relative; naive evaluation may lose the sign.
        let a = 1.0 + f64::EPSILON;
        let d = 1.0 - f64::EPSILON;
        let det = <f64 as Scalar>::det2(&a, &1.0, &1.0, &d);
        assert!(det < 0.0);
        assert_eq!(det, -f64::EPSILON * f64::EPSILON);
    }

    #[test]
    fn rational_det_exact() {
        let r = |n, d| Rational64::new(n, d);
        let det = Rational64::det2(&r(1, 3), &r(2, 5), &r(3, 7), &r(1, 2));
        assert_eq!(det, r(1, 6) - r(6, 35));
        assert!(!Rational64::negligible(&det, &r(1, 1)));
        assert!(Rational64::negligible(&r(0, 1), &r(1, 1)));
    }
}
