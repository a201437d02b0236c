//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which is any
//! IEEE float with the conversions we need. The crate root pins concrete
//! aliases at `f64`; `f32` works for forward passes but the shipped tolerances
//! (gradient checks, oracle comparisons) assume double precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy cast from `f64`, for literals and config values.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must convert to scalar type")
    }

    /// Widening cast to `f64`, for reporting and serialization.
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
