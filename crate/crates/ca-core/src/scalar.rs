//! Scalar abstraction for the numeric core.
//!
//! Everything under `vsa`, `nn`, `encoder`, `fusion`, `memory` and `signal`
//! is generic over [`Scalar`] so the same code runs in f32 or f64. Training
//! defaults to f64 (see the aliases at the crate root); f32 is there for
//! inference-style use where the precision loss is acceptable.

use std::fmt::Display;
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};
use rustfft::FftNum;

pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssignOps + Sum<Self> + FftNum + Display
{
    /// Lossy conversion from f64; panics only if the value is not
    /// representable at all (never for finite inputs on f32/f64).
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
