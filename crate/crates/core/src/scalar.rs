//! Floating-point abstraction for the latency arithmetic.
//!
//! Cost models, SLO arithmetic and fit metrics are written once against
//! [`Scalar`] and instantiated for `f64` (the simulator's clock type) and
//! `f32` (compact parameter tables). Concrete aliases live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or config value.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable in every Scalar")
    }

    /// Conversion from a count (batch size, token length).
    #[inline]
    fn of_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count is representable in every Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
