//! Scalar abstraction shared by the solver, the dynamics and the predictor.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the numerical core is generic over (`f32` or `f64`).
pub trait Real:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Base perturbation for central finite differences. The effective step for
    /// a coordinate `c` is `fd_step() * max(1, |c|)`.
    fn fd_step() -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Real for f64 {
    #[inline]
    fn fd_step() -> Self {
        1e-6
    }
}

impl Real for f32 {
    // cube root of f32 epsilon; 1e-6 is below the f32 roundoff floor
    #[inline]
    fn fd_step() -> Self {
        4.9e-3
    }
}

/// `true` when every entry of the slice is finite.
pub fn all_finite<T: Real>(values: &[T]) -> bool {
    values.iter().all(|v| v.is_finite_value())
}
