//! Element type abstraction: the pipeline trains in `f32`, the gradient-check
//! suites run the identical code in `f64` for finite-difference headroom.

use core::fmt::{Debug, Display};
use core::iter::Sum;
use num_traits::Float;

pub trait Scalar:
    Float + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
