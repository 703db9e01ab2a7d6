//! Scalar abstraction for the numeric kernels.
//!
//! String similarity, precision arithmetic, and embedding geometry are
//! written against [`Real`] so they work at `f32` or `f64`. The rest of
//! the crate is discrete (sets, strings, trees) and has no scalar type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable in similarity and score arithmetic.
///
/// Blanket-implemented for any `num_traits::Float` that can be built
/// from primitive counts; in practice `f32` and `f64`.
pub trait Real: Float + FromPrimitive + Debug + Display + 'static {
    /// Lossless-enough conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl<T: Float + FromPrimitive + Debug + Display + 'static> Real for T {}
