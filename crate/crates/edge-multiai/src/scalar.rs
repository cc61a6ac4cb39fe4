//! Scalar abstraction so the simulator can run at different float widths.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar used for times (ms), sizes (MB) and scores.
///
/// Implemented for `f32` and `f64`. All random draws happen in `f64` and are
/// converted afterwards, so two runs with the same seed visit the same sample
/// sequence regardless of the scalar width.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 value representable in scalar type")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize value representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar value representable as f64")
    }

    fn hundred() -> Self {
        Self::from_f64_lossy(100.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
