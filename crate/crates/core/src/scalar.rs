//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the field, renderer, extractor and losses are generic over.
///
/// Implemented for `f32` (production runs, checkpoints) and `f64` (gradient
/// checks and fixed-point tests).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `ln(1 + e^x)`, stable for large |x|.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::lit(20.0) {
        x
    } else if x < S::lit(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`], clamped so that tiny targets stay finite.
#[inline]
pub fn softplus_inv<S: Scalar>(y: S) -> S {
    if y > S::lit(20.0) {
        y
    } else if y <= S::lit(2e-9) {
        S::lit(-20.0)
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Inverse of [`sigmoid`]; the argument is clamped to `[eps, 1 - eps]`.
#[inline]
pub fn logit<S: Scalar>(y: S, eps: S) -> S {
    let y = y.max(eps).min(S::one() - eps);
    (y / (S::one() - y)).ln()
}
