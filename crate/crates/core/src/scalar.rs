//! Scalar abstraction for all reward and policy math.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! code runs in `f32` or `f64`. The crate root exports `f64` aliases, which
//! is what the training pipeline and CLI use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; total for float targets.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to any float scalar")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to any float scalar")
    }

    fn lossy_f64(self) -> f64 {
        self.to_f64().expect("float scalar converts to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}
