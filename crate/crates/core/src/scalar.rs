//! Floating-point scalar abstraction.
//!
//! The numeric core (linear algebra, feature maps, confidence radii,
//! protocol arithmetic) is generic over [`Scalar`] so it can run in `f32`
//! or `f64`. The shipped harness instantiates everything at `f64`; see the
//! aliases at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the numeric core: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Conversion from a dimension or count.
    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count not representable in scalar type")
    }

    /// Conversion from an `f64` constant.
    fn constant(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("constant not representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
