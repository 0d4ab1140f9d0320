//! Scalar abstraction shared by every numerical kernel in the crate.
//!
//! Kernels are written once against [`Real`] and instantiated with `f32`,
//! `f64`, or [`Dual`](crate::dual::Dual) when derivatives are needed.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar usable by the hand model, losses and metrics.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + Debug
    + Default
    + Send
    + Sync
    + 'static
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
{
    /// Lift an `f64` constant into this scalar (zero derivative for duals).
    fn lift(x: f64) -> Self;

    /// Value part as `f64`.
    fn re(self) -> f64;
}

impl Real for f64 {
    #[inline(always)]
    fn lift(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn re(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline(always)]
    fn lift(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn re(self) -> f64 {
        self as f64
    }
}

/// Convert between two scalar types through their value parts.
#[inline(always)]
pub fn cast<A: Real, B: Real>(x: A) -> B {
    B::lift(x.re())
}
