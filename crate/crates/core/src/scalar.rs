//! Scalar abstraction for the closed-form rate and bound formulas.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the certification and rate formulas are generic over.
///
/// Implemented for `f32` and `f64`. Counts (which can exceed 2^32 at full
/// run length) enter through [`Real::from_count`].
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an event count.
    #[inline]
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("u64 is representable in every float type")
    }

    /// Lossy conversion from an `f64` literal or parameter.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every float type")
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}
