//! Floating-point abstraction used by the numeric modules.
//!
//! Everything numeric in the crate is written against [`Real`], which is
//! implemented for `f32` and `f64`. The crate root re-exports `f64` aliases
//! for the common types.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::num::ParseFloatError;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + FromStr<Err = ParseFloatError>
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Default relative duality-gap / feasibility tolerance for the SDP engine.
    const SOLVER_TOL: f64;

    /// Converts an `f64` literal. Panics only if the target type cannot
    /// represent finite `f64` values at all, which never happens for
    /// `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const SOLVER_TOL: f64 = 2e-4;
}

impl Real for f64 {
    const SOLVER_TOL: f64 = 1e-8;
}

/// `x * log2(x)` with the convention `0 log 0 = 0`.
#[inline]
pub(crate) fn xlog2x<T: Real>(x: T) -> T {
    if x <= T::zero() {
        T::zero()
    } else {
        x * x.log2()
    }
}
