//! Engine element type.
//!
//! The whole engine is generic over one floating-point element type:
//! `f32` is the training mode, `f64` the verification mode used by the
//! gradient checks. Choosing the type parameter selects the precision for
//! every tensor in a graph; mixing precisions within one graph is not
//! representable.

use std::fmt;

use num_traits::Float;

/// Element type of tensors and graphs.
pub trait Scalar:
    Float + Send + Sync + fmt::Debug + fmt::Display + Default + 'static
{
    const DTYPE: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
