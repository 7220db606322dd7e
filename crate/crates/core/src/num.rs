//! Scalar abstraction for the numerical core.
//!
//! Everything in this crate is generic over [`Real`], which is any IEEE
//! float with the `num-traits` surface we need. `f64` is the intended
//! workhorse; `f32` works for exploratory runs at loose tolerances.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, NumCast, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + core::iter::Sum
    + core::fmt::Debug
    + core::fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand conversion from `f64` literals into a generic scalar.
#[inline]
pub fn rf<R: Real>(x: f64) -> R {
    <R as NumCast>::from(x).expect("f64 -> Real conversion")
}

/// Lossy conversion back to `f64` (used for error reporting and tags).
#[inline]
pub fn to_f64<R: Real>(x: R) -> f64 {
    ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}
