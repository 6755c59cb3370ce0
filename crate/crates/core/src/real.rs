//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Exp1, Open01, StandardNormal};

/// Floating point scalar usable by the simulators and solvers (`f32` or `f64`).
pub trait Real:
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
    /// Converts an `f64` literal. Never fails for the supported types.
    fn of(v: f64) -> Self;

    /// Lossy conversion used for reporting.
    fn as_f64(self) -> f64;

    fn standard_normal<G: Rng + ?Sized>(rng: &mut G) -> Self;

    /// Uniform sample on the open interval `(0, 1)`.
    fn open01<G: Rng + ?Sized>(rng: &mut G) -> Self;

    /// Exponential sample with unit rate.
    fn exp1<G: Rng + ?Sized>(rng: &mut G) -> Self;

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn standard_normal<G: Rng + ?Sized>(rng: &mut G) -> Self {
                rng.sample(StandardNormal)
            }

            #[inline]
            fn open01<G: Rng + ?Sized>(rng: &mut G) -> Self {
                rng.sample(Open01)
            }

            #[inline]
            fn exp1<G: Rng + ?Sized>(rng: &mut G) -> Self {
                rng.sample(Exp1)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
