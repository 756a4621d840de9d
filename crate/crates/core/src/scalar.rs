use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole crate is generic over.
///
/// `RealField` supplies the linear-algebra surface (Cholesky, eigen, QR);
/// the two conversion methods bridge to `f64`, which is where random draws
/// and serialized output live regardless of the working precision.
pub trait Scalar: RealField + Copy {
    /// Conversion from an `f64` literal or draw.
    fn of_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn half() -> Self {
        Self::of_f64(0.5)
    }
}

impl<T> Scalar for T
where
    T: RealField + Copy + FromPrimitive + ToPrimitive,
{
    #[inline]
    fn of_f64(v: f64) -> Self {
        <T as FromPrimitive>::from_f64(v).expect("f64 value must be representable")
    }

    #[inline]
    fn to_f64(self) -> f64 {
        <T as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }
}
