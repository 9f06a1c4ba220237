//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used by the estimation code: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; constants in the code base are written as `f64`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Logistic function `1 / (1 + exp(-x))`, evaluated without overflow.
    #[inline]
    fn logistic(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    #[inline]
    fn softplus(self) -> Self {
        self.max(Self::zero()) + (-self.abs()).exp().ln_1p()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so the result is reproducible.
pub fn pairwise_sum<F: Scalar>(xs: &[F]) -> F {
    const BASE: usize = 16;
    if xs.len() <= BASE {
        let mut acc = F::zero();
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Combines per-block partial results with a balanced binary tree whose
/// shape depends only on `parts.len()`.
pub fn tree_reduce<T, C>(mut parts: Vec<T>, combine: C) -> Option<T>
where
    C: Fn(T, T) -> T,
{
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}
