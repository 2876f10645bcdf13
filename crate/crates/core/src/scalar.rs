//! Floating-point element type shared by tensors, geometry and the network.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type accepted by [`crate::tensor::Tensor`] and the autodiff graph.
///
/// Implemented for `f32` and `f64`. Training and evaluation pipelines run on
/// `f64`; `f32` is available for inference-only use.
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
    /// Lossy conversion from `f64`; used for literals and hyper-parameters.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip<T: Scalar>(v: f64) -> f64 {
        T::lit(v).as_f64()
    }

    #[test]
    fn literals_roundtrip() {
        assert_eq!(roundtrip::<f64>(0.1), 0.1);
        assert!((roundtrip::<f32>(0.1) - 0.1).abs() < 1e-7);
        assert_eq!(f64::half(), 0.5);
    }
}
