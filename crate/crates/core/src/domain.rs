//! State-space geometry: intervals, boxes, balls and the whole space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DomainSpec<R> {
    Interval { a: R, b: R },
    Box { lows: Vec<R>, highs: Vec<R> },
    Ball { center: Vec<R>, radius: R },
    FullSpace { dim: usize },
}

impl<R: Real> DomainSpec<R> {
    pub fn interval(a: R, b: R) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(LabError::Domain(format!("interval needs a < b, got ({a}, {b})")));
        }
        Ok(Self::Interval { a, b })
    }

    pub fn boxed(lows: Vec<R>, highs: Vec<R>) -> Result<Self> {
        if lows.is_empty() || lows.len() != highs.len() {
            return Err(LabError::Domain("box needs matching non-empty bounds".into()));
        }
        if let Some(i) = (0..lows.len()).find(|&i| !(lows[i] < highs[i])) {
            return Err(LabError::Domain(format!("box axis {i} has low >= high")));
        }
        Ok(Self::Box { lows, highs })
    }

    pub fn ball(center: Vec<R>, radius: R) -> Result<Self> {
        if center.is_empty() {
            return Err(LabError::Domain("ball needs a non-empty center".into()));
        }
        if !(radius > R::zero()) || !radius.is_finite() {
            return Err(LabError::Domain(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn full_space(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::Domain("dimension must be positive".into()));
        }
        Ok(Self::FullSpace { dim })
    }

    /// Re-checks the constructor invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Interval { a, b } => Self::interval(*a, *b).map(|_| ()),
            Self::Box { lows, highs } => Self::boxed(lows.clone(), highs.clone()).map(|_| ()),
            Self::Ball { center, radius } => Self::ball(center.clone(), *radius).map(|_| ()),
            Self::FullSpace { dim } => Self::full_space(*dim).map(|_| ()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Interval { .. } => 1,
            Self::Box { lows, .. } => lows.len(),
            Self::Ball { center, .. } => center.len(),
            Self::FullSpace { dim } => *dim,
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Self::FullSpace { .. })
    }

    /// Coordinate-wise reflection is only defined for rectangular domains.
    pub fn is_rectangular(&self) -> bool {
        matches!(self, Self::Interval { .. } | Self::Box { .. })
    }

    /// Bounds of axis `i` for rectangular domains.
    #[inline]
    pub fn axis_bounds(&self, i: usize) -> Option<(R, R)> {
        match self {
            Self::Interval { a, b } if i == 0 => Some((*a, *b)),
            Self::Box { lows, highs } => lows.get(i).map(|&l| (l, highs[i])),
            _ => None,
        }
    }

    /// Open-set membership.
    pub fn contains(&self, x: &[R]) -> bool {
        match self {
            Self::Interval { a, b } => x[0] > *a && x[0] < *b,
            Self::Box { lows, highs } => x
                .iter()
                .zip(lows.iter().zip(highs))
                .all(|(&xi, (&l, &h))| xi > l && xi < h),
            Self::Ball { center, radius } => dist2(x, center) < *radius * *radius,
            Self::FullSpace { .. } => true,
        }
    }

    pub fn closure_contains(&self, x: &[R]) -> bool {
        match self {
            Self::Interval { a, b } => x[0] >= *a && x[0] <= *b,
            Self::Box { lows, highs } => x
                .iter()
                .zip(lows.iter().zip(highs))
                .all(|(&xi, (&l, &h))| xi >= l && xi <= h),
            Self::Ball { center, radius } => dist2(x, center) <= *radius * *radius,
            Self::FullSpace { .. } => true,
        }
    }

    /// Distance to the boundary, zero exactly on the boundary. `None` for the whole space.
    pub fn boundary_distance(&self, x: &[R]) -> Option<R> {
        match self {
            Self::Interval { a, b } => Some((x[0] - *a).abs().min((*b - x[0]).abs())),
            Self::Box { lows, highs } => {
                if self.closure_contains(x) {
                    let mut d = R::infinity();
                    for (i, &xi) in x.iter().enumerate() {
                        d = d.min(xi - lows[i]).min(highs[i] - xi);
                    }
                    Some(d)
                } else {
                    // Euclidean distance to the box from outside.
                    let mut s = R::zero();
                    for (i, &xi) in x.iter().enumerate() {
                        let e = (lows[i] - xi).max(xi - highs[i]).max(R::zero());
                        s += e * e;
                    }
                    Some(s.sqrt())
                }
            }
            Self::Ball { center, radius } => Some((*radius - dist2(x, center).sqrt()).abs()),
            Self::FullSpace { .. } => None,
        }
    }

    /// Lebesgue measure of the domain.
    pub fn volume(&self) -> Option<R> {
        match self {
            Self::Interval { a, b } => Some(*b - *a),
            Self::Box { lows, highs } => Some(
                lows.iter()
                    .zip(highs)
                    .fold(R::one(), |acc, (&l, &h)| acc * (h - l)),
            ),
            Self::Ball { center, radius } => {
                let d = center.len() as f64;
                let unit = std::f64::consts::PI.powf(d / 2.0) / gamma(d / 2.0 + 1.0);
                Some(R::of(unit) * radius.powi(center.len() as i32))
            }
            Self::FullSpace { .. } => None,
        }
    }

    pub fn bounding_box(&self) -> Option<(Vec<R>, Vec<R>)> {
        match self {
            Self::Interval { a, b } => Some((vec![*a], vec![*b])),
            Self::Box { lows, highs } => Some((lows.clone(), highs.clone())),
            Self::Ball { center, radius } => Some((
                center.iter().map(|&c| c - *radius).collect(),
                center.iter().map(|&c| c + *radius).collect(),
            )),
            Self::FullSpace { .. } => None,
        }
    }

    /// Closest boundary point to `x` (used to place surface-measure contacts).
    pub fn nearest_boundary_point(&self, x: &[R]) -> Option<Vec<R>> {
        match self {
            Self::Interval { a, b } => {
                let p = if (x[0] - *a).abs() <= (*b - x[0]).abs() { *a } else { *b };
                Some(vec![p])
            }
            Self::Box { lows, highs } => {
                let mut best = (R::infinity(), 0usize, R::zero());
                for (i, &xi) in x.iter().enumerate() {
                    let dl = (xi - lows[i]).abs();
                    let dh = (highs[i] - xi).abs();
                    if dl < best.0 {
                        best = (dl, i, lows[i]);
                    }
                    if dh < best.0 {
                        best = (dh, i, highs[i]);
                    }
                }
                let mut p = x.to_vec();
                p[best.1] = best.2;
                Some(p)
            }
            Self::Ball { center, radius } => {
                let r = dist2(x, center).sqrt();
                if r == R::zero() {
                    let mut p = center.clone();
                    p[0] += *radius;
                    return Some(p);
                }
                Some(
                    x.iter()
                        .zip(center)
                        .map(|(&xi, &c)| c + (xi - c) * *radius / r)
                        .collect(),
                )
            }
            Self::FullSpace { .. } => None,
        }
    }

    /// Uniform sample from the domain (rejection from the bounding box for balls).
    pub fn sample_uniform<G: Rng + ?Sized>(&self, rng: &mut G) -> Result<Vec<R>> {
        let (lo, hi) = self
            .bounding_box()
            .ok_or_else(|| LabError::Unsupported("uniform sampling needs a bounded domain".into()))?;
        loop {
            let x: Vec<R> = lo
                .iter()
                .zip(&hi)
                .map(|(&l, &h)| l + (h - l) * R::open01(rng))
                .collect();
            if self.contains(&x) {
                return Ok(x);
            }
        }
    }
}

#[inline]
pub(crate) fn dist2<R: Real>(x: &[R], y: &[R]) -> R {
    x.iter().zip(y).fold(R::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
}

pub use statrs::function::gamma::gamma;
