//! Scalar abstraction for the real-valued (relaxed) side of the model.
//!
//! The bit-packed code plane is scalar-free; everything that runs through
//! `tanh` is generic over [`Real`] so the same code serves the f32 training
//! pipeline and the f64 instantiation used for gradient verification.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: f32 or f64.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from f64 for configuration values.
    fn from_config(v: f64) -> Self {
        Self::from_f64(v).expect("finite config value")
    }

    fn to_config(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}
