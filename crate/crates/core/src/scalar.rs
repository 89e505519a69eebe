use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point sample type used by rasters, metrics and the model.
///
/// Implemented for `f32` (storage, training) and `f64` (oracles,
/// gradient checks).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; the constants used in this crate are all representable.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize fits in float")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn f32(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
