//! Scalar abstraction for the geometric core.
//!
//! Distance metrics, norms, and projections are generic over [`Real`] so the
//! same code serves f32 (the working precision of the networks) and f64 (the
//! precision used by test oracles). Large reductions always accumulate in f64
//! regardless of the element type.

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable throughout the geometric core.
pub trait Real: Float + FromPrimitive + NumAssign + Copy + Send + Sync + std::fmt::Debug {
    fn as_f64(self) -> f64;
    fn of_f64(v: f64) -> Self;
}

impl Real for f32 {
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
}
