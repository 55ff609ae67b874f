//! Floating-point scalar abstraction shared by the numeric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point: `f32` or `f64`.
///
/// Feature extraction, DTW and inner-product search are written against this
/// trait so the same code runs in single precision (index storage) and double
/// precision (features, oracles).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every float type")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to every float type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// True when a variance is indistinguishable from zero at the scale of the data.
pub(crate) fn negligible_variance<S: Scalar>(var: S, scale: S) -> bool {
    let tol = S::epsilon() * S::of(64.0) * scale.max(S::min_positive_value());
    var <= tol * tol
}
