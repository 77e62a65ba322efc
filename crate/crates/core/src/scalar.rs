//! Scalar abstraction: all core math is generic over `Real`, instantiated
//! at `f32` or `f64`. The concrete aliases used by the CLI live at the
//! crate root.

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssignOps};
use std::fmt::{Debug, Display};

/// Floating-point scalar for graph, temporal, loss, and metric math.
pub trait Real:
    Float + FromPrimitive + NumAssignOps + ScalarOperand + Debug + Display + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Convert an `f64` constant into `T`.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}
