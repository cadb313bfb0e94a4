//! Scalar abstraction: the numeric kernels are generic over the float width.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type usable throughout the math layers.
///
/// Implemented for `f32` and `f64`; the double-precision alias
/// [`crate::Real`] is what the pipeline binaries use.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Debug + Display + Copy + Send + Sync + 'static
{
    /// Lossless (or best-effort for `f32`) conversion from `f64`.
    fn from_f64_lossy(v: f64) -> Self;

    /// Widening conversion to `f64` for reporting and data exchange.
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares<S: Scalar>(xs: &[S]) -> S {
        xs.iter().fold(S::zero(), |acc, &x| acc + x * x)
    }

    #[test]
    fn generic_math_works_for_both_widths() {
        let a32: Vec<f32> = vec![1.0, 2.0, 3.0];
        let a64: Vec<f64> = vec![1.0, 2.0, 3.0];
        assert_eq!(sum_of_squares(&a32), 14.0f32);
        assert_eq!(sum_of_squares(&a64), 14.0f64);
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let v = 0.123_456_789_012_345_64_f64;
        assert_eq!(f64::from_f64_lossy(v).to_f64_lossy(), v);
    }
}
