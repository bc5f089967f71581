//! Scalar abstractions.
//!
//! Real-valued reference paths are written once against [`Real`] (plain
//! field arithmetic plus a few rounding helpers) or [`Scalar`] (a full
//! IEEE float), and instantiated for `f32`, `f64` and, where a path must be
//! exact, for [`Exact`](crate::Exact) rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, One, ToPrimitive};

/// Field arithmetic shared by floats and exact rationals.
pub trait Real: Clone + Debug + PartialOrd + Num + std::ops::Neg<Output = Self> {
    /// Converts from `f64`. Exact for rationals, rounding for `f32`.
    fn of_f64(v: f64) -> Self;
    /// Nearest `f64`.
    fn as_f64(&self) -> f64;
    /// Smallest integer not below `self`.
    fn ceil_int(&self) -> i64;
    /// `2^e`.
    fn pow2(e: i32) -> Self;
}

/// IEEE floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Real + num_traits::Float + Sum + Display + Default + Send + Sync + 'static
{
}

impl Real for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(&self) -> f64 {
        *self as f64
    }
    fn ceil_int(&self) -> i64 {
        f32::ceil(*self) as i64
    }
    fn pow2(e: i32) -> Self {
        f32::powi(2.0, e)
    }
}

impl Real for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(&self) -> f64 {
        *self
    }
    fn ceil_int(&self) -> i64 {
        f64::ceil(*self) as i64
    }
    fn pow2(e: i32) -> Self {
        f64::powi(2.0, e)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

impl Real for BigRational {
    fn of_f64(v: f64) -> Self {
        BigRational::from_float(v).expect("finite value")
    }
    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
    fn ceil_int(&self) -> i64 {
        self.ceil().to_integer().to_i64().expect("integer part fits in i64")
    }
    fn pow2(e: i32) -> Self {
        let p = BigInt::one() << e.unsigned_abs();
        if e >= 0 {
            BigRational::from_integer(p)
        } else {
            BigRational::new(BigInt::one(), p)
        }
    }
}

/// `max |x|` over a slice, or zero when empty.
pub fn max_abs<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |m, v| {
        let a = if *v < T::zero() { -v.clone() } else { v.clone() };
        if a > m {
            a
        } else {
            m
        }
    })
}
