//! Named function values used as problem data.

use std::fmt;
use std::sync::Arc;

use crate::real::Real;

type SpatialClosure<R> = dyn Fn(&[R]) -> R + Send + Sync;
type CoefClosure<R> = dyn Fn(&[R], R) -> R + Send + Sync;

/// A function of position, `x ↦ φ(x)`.
#[derive(Clone)]
pub enum SpatialFn<R> {
    Const(R),
    Func { name: String, f: Arc<SpatialClosure<R>> },
}

impl<R: Real> SpatialFn<R> {
    pub fn constant(c: R) -> Self {
        Self::Const(c)
    }

    pub fn zero() -> Self {
        Self::Const(R::zero())
    }

    pub fn new(name: impl Into<String>, f: impl Fn(&[R]) -> R + Send + Sync + 'static) -> Self {
        Self::Func { name: name.into(), f: Arc::new(f) }
    }

    #[inline]
    pub fn eval(&self, x: &[R]) -> R {
        match self {
            Self::Const(c) => *c,
            Self::Func { f, .. } => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Const(c) if *c == R::zero())
    }

    pub fn name(&self) -> String {
        match self {
            Self::Const(c) => format!("{c}"),
            Self::Func { name, .. } => name.clone(),
        }
    }

    pub fn abs(&self) -> Self {
        match self {
            Self::Const(c) => Self::Const(c.abs()),
            Self::Func { name, f } => {
                let f = f.clone();
                Self::new(format!("|{name}|"), move |x| f(x).abs())
            }
        }
    }
}

impl<R: fmt::Debug> fmt::Debug for SpatialFn<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Const(c) => write!(f, "SpatialFn({c:?})"),
            Self::Func { name, .. } => write!(f, "SpatialFn({name})"),
        }
    }
}

/// A coefficient `(x, y) ↦ f(x, y)`.
#[derive(Clone)]
pub enum CoefFn<R> {
    Const(R),
    Func { name: String, f: Arc<CoefClosure<R>>, y_free: bool },
}

impl<R: Real> CoefFn<R> {
    pub fn constant(c: R) -> Self {
        Self::Const(c)
    }

    pub fn zero() -> Self {
        Self::Const(R::zero())
    }

    pub fn new(name: impl Into<String>, f: impl Fn(&[R], R) -> R + Send + Sync + 'static) -> Self {
        Self::Func { name: name.into(), f: Arc::new(f), y_free: false }
    }

    /// A coefficient that ignores `y`.
    pub fn of_x(name: impl Into<String>, f: impl Fn(&[R]) -> R + Send + Sync + 'static) -> Self {
        Self::Func { name: name.into(), f: Arc::new(move |x, _| f(x)), y_free: true }
    }

    #[inline]
    pub fn eval(&self, x: &[R], y: R) -> R {
        match self {
            Self::Const(c) => *c,
            Self::Func { f, .. } => f(x, y),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Const(c) if *c == R::zero())
    }

    /// True when the coefficient is known not to depend on `y`.
    pub fn is_linear_free(&self) -> bool {
        match self {
            Self::Const(_) => true,
            Self::Func { y_free, .. } => *y_free,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Const(c) => format!("{c}"),
            Self::Func { name, .. } => name.clone(),
        }
    }

    /// `x ↦ |f(x, 0)|`.
    pub fn abs_at_zero(&self) -> SpatialFn<R> {
        match self {
            Self::Const(c) => SpatialFn::Const(c.abs()),
            Self::Func { name, f, .. } => {
                let f = f.clone();
                SpatialFn::new(format!("|{name}(x,0)|"), move |x| f(x, R::zero()).abs())
            }
        }
    }
}

impl<R: fmt::Debug> fmt::Debug for CoefFn<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Const(c) => write!(f, "CoefFn({c:?})"),
            Self::Func { name, .. } => write!(f, "CoefFn({name})"),
        }
    }
}

/// Anything that can be read at a point: grid interpolants, constants, functions.
pub trait FieldRead<R>: Sync {
    fn read(&self, x: &[R]) -> R;
}

impl<R: Real> FieldRead<R> for R {
    #[inline]
    fn read(&self, _x: &[R]) -> R {
        *self
    }
}

impl<R: Real> FieldRead<R> for SpatialFn<R> {
    #[inline]
    fn read(&self, x: &[R]) -> R {
        self.eval(x)
    }
}
