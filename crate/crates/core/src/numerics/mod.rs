//! Dense row-major tensors with a small reverse-mode autodiff graph.
//!
//! Everything is generic over [`Real`] so the same model code can be
//! evaluated in `f32` (training and inference) and `f64` (gradient oracles).

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, sample_coords};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Floating point element type of tensors and graphs.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
