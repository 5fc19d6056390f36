//! Scalar abstraction: every numeric routine in this crate is generic over
//! [`Real`], implemented for `f32` and `f64`.
//!
//! `f64` is the default precision (all gradient oracles and metric tests run
//! in 64-bit); `f32` exists for bulk feature storage.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar the library is generic over.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Width in bytes of the native on-disk little-endian encoding (4 or 8).
    const BYTE_WIDTH: u32;

    /// Shorthand for converting an `f64` constant into `Self`.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to Real")
    }

    /// Lossless-as-possible view of the value as `f64` (used for error
    /// reporting and file output).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    const BYTE_WIDTH: u32 = 4;
}

impl Real for f64 {
    const BYTE_WIDTH: u32 = 8;
}
