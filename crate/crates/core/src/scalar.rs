//! Scalar abstraction shared by every numeric routine in the workspace.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating-point element type: `f32` or `f64`.
///
/// Everything in the attack path runs in `f64`; `f32` is supported so the
/// forward pass can be cross-checked at lower precision.
pub trait Real: Float + FromPrimitive + NumCast + Default + Debug + Display + Sum + Send + Sync + 'static {
    /// Converts an `f64` literal. Infallible for the two supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Size in bytes of one element.
    const BYTES: usize;
}

impl Real for f32 {
    const BYTES: usize = 4;
}

impl Real for f64 {
    const BYTES: usize = 8;
}
