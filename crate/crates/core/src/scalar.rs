//! Scalar abstraction. Every numeric routine in the crate is generic over a
//! float width; `f32` is the working type for training, `f64` is used where
//! extra precision matters (finite-difference gradient checks, oracles).

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; the only way literal constants enter
    /// generic code.
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn half() -> Self {
        Self::of(0.5)
    }
    fn two() -> Self {
        Self::of(2.0)
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
