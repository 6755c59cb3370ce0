//! Tensor grids carrying solution snapshots, with multilinear interpolation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{LabError, Result};
use crate::func::FieldRead;
use crate::real::Real;

/// Value used for reads outside the grid's bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Extension<R> {
    /// Boundary condition value, e.g. `0` for killed problems.
    Constant { value: R },
    /// Clamp the query point onto the grid box.
    Clamp,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridFunction<R> {
    pub axes: Vec<Vec<R>>,
    /// Row-major values, last axis fastest.
    pub values: Vec<R>,
    pub std_errors: Option<Vec<R>>,
    pub extension: Extension<R>,
    #[serde(skip)]
    uniform: Vec<Option<(R, R)>>,
}

fn detect_uniform<R: Real>(axis: &[R]) -> Option<(R, R)> {
    let n = axis.len();
    let h = (axis[n - 1] - axis[0]) / R::of_usize(n - 1);
    let tol = h * R::of(1e-9) + R::epsilon() * R::of(16.0) * axis[0].abs().max(axis[n - 1].abs());
    let ok = axis
        .iter()
        .enumerate()
        .all(|(i, &v)| (v - (axis[0] + h * R::of_usize(i))).abs() <= tol);
    ok.then(|| (axis[0], R::one() / h))
}

impl<R: Real> GridFunction<R> {
    pub fn new(axes: Vec<Vec<R>>, values: Vec<R>, extension: Extension<R>) -> Result<Self> {
        if axes.is_empty() {
            return Err(LabError::InvalidParameter("grid needs at least one axis".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            if a.len() < 2 || a.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(LabError::InvalidParameter(format!(
                    "grid axis {i} must have >= 2 strictly increasing points"
                )));
            }
        }
        let n: usize = axes.iter().map(Vec::len).product();
        if values.len() != n {
            return Err(LabError::InvalidParameter(format!(
                "grid has {n} points but {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter("grid values must be finite".into()));
        }
        let uniform = axes.iter().map(|a| detect_uniform(a)).collect();
        Ok(Self { axes, values, std_errors: None, extension, uniform })
    }

    /// Uniform tensor grid with `n_points` per axis over the bounding box of `domain`.
    pub fn over_domain(domain: &DomainSpec<R>, n_points: usize, extension: Extension<R>) -> Result<Self> {
        let (lo, hi) = domain
            .bounding_box()
            .ok_or_else(|| LabError::Unsupported("grid over an unbounded domain".into()))?;
        let axes = lo.iter().zip(&hi).map(|(&l, &h)| linspace(l, h, n_points)).collect::<Vec<_>>();
        let n = n_points.pow(lo.len() as u32);
        Self::new(axes, vec![R::zero(); n], extension)
    }

    pub fn uniform_1d(a: R, b: R, n_points: usize, extension: Extension<R>) -> Result<Self> {
        Self::new(vec![linspace(a, b, n_points)], vec![R::zero(); n_points], extension)
    }

    pub fn with_values(&self, values: Vec<R>) -> Result<Self> {
        Self::new(self.axes.clone(), values, self.extension)
    }

    pub fn with_extension(mut self, extension: Extension<R>) -> Self {
        self.extension = extension;
        self
    }

    pub fn with_std_errors(mut self, se: Vec<R>) -> Self {
        assert_eq!(se.len(), self.values.len());
        self.std_errors = Some(se);
        self
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coordinates of grid point `i`.
    pub fn point_into(&self, mut i: usize, out: &mut [R]) {
        for d in (0..self.axes.len()).rev() {
            let n = self.axes[d].len();
            out[d] = self.axes[d][i % n];
            i /= n;
        }
    }

    pub fn point(&self, i: usize) -> Vec<R> {
        let mut p = vec![R::zero(); self.dim()];
        self.point_into(i, &mut p);
        p
    }

    pub fn std_error(&self, i: usize) -> R {
        self.std_errors.as_ref().map(|s| s[i]).unwrap_or_else(R::zero)
    }

    #[inline]
    fn locate(&self, d: usize, x: R) -> (usize, R) {
        let axis = &self.axes[d];
        let n = axis.len();
        let k = match self.uniform[d] {
            Some((lo, inv_h)) => ((x - lo) * inv_h).floor().to_isize().unwrap_or(0).clamp(0, n as isize - 2) as usize,
            None => axis.partition_point(|&v| v <= x).saturating_sub(1).min(n - 2),
        };
        let w = (x - axis[k]) / (axis[k + 1] - axis[k]);
        (k, w.max(R::zero()).min(R::one()))
    }

    /// Multilinear interpolant; outside the grid box the extension rule applies.
    #[inline]
    pub fn interpolate(&self, x: &[R]) -> R {
        let inside = x.iter().zip(&self.axes).all(|(&xi, a)| xi >= a[0] && xi <= a[a.len() - 1]);
        if !inside {
            if let Extension::Constant { value } = self.extension {
                return value;
            }
        }
        if self.axes.len() == 1 {
            let (k, w) = self.locate(0, x[0]);
            return self.values[k] + w * (self.values[k + 1] - self.values[k]);
        }
        let d = self.axes.len();
        let mut base = 0usize;
        let mut cells = [(0usize, R::zero()); 8];
        let mut stride = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            stride[i] = stride[i + 1] * self.axes[i + 1].len();
        }
        let mut loc = Vec::with_capacity(d);
        for (i, &xi) in x.iter().enumerate().take(d) {
            let (k, w) = self.locate(i, xi);
            base += k * stride[i];
            loc.push(w);
        }
        if d <= 3 {
            let corners = 1usize << d;
            for (c, cell) in cells.iter_mut().enumerate().take(corners) {
                let mut off = base;
                let mut wt = R::one();
                for i in 0..d {
                    if c >> i & 1 == 1 {
                        off += stride[i];
                        wt *= loc[i];
                    } else {
                        wt *= R::one() - loc[i];
                    }
                }
                *cell = (off, wt);
            }
            return cells[..corners].iter().map(|&(o, w)| w * self.values[o]).sum();
        }
        let mut total = R::zero();
        for c in 0..(1usize << d) {
            let mut off = base;
            let mut wt = R::one();
            for i in 0..d {
                if c >> i & 1 == 1 {
                    off += stride[i];
                    wt *= loc[i];
                } else {
                    wt *= R::one() - loc[i];
                }
            }
            total += wt * self.values[off];
        }
        total
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Result<Self> {
        let mut g = self.with_values(self.values.iter().map(|&v| f(v)).collect())?;
        g.std_errors = self.std_errors.clone();
        Ok(g)
    }

    pub fn sup_abs_diff(&self, other: &Self) -> R {
        assert_eq!(self.values.len(), other.values.len(), "grids differ in size");
        self.values
            .iter()
            .zip(&other.values)
            .fold(R::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn sup_abs(&self) -> R {
        self.values.iter().fold(R::zero(), |m, &v| m.max(v.abs()))
    }

    /// CSV rows `t,x_1..x_d,value,std_error` (no header).
    pub fn write_csv_rows<W: Write>(&self, t: Option<R>, out: &mut W) -> std::io::Result<()> {
        let mut p = vec![R::zero(); self.dim()];
        for i in 0..self.len() {
            self.point_into(i, &mut p);
            match t {
                Some(t) => write!(out, "{}", t.as_f64())?,
                None => write!(out, "")?,
            }
            for (j, v) in p.iter().enumerate() {
                if t.is_some() || j > 0 {
                    write!(out, ",")?;
                }
                write!(out, "{}", v.as_f64())?;
            }
            writeln!(out, ",{},{}", self.values[i].as_f64(), self.std_error(i).as_f64())?;
        }
        Ok(())
    }

    pub fn csv_header(dim: usize, with_time: bool) -> String {
        let mut cols: Vec<String> = Vec::new();
        if with_time {
            cols.push("t".into());
        }
        cols.extend((1..=dim).map(|i| format!("x_{i}")));
        cols.push("value".into());
        cols.push("std_error".into());
        cols.join(",")
    }
}

impl<R: Real> FieldRead<R> for GridFunction<R> {
    #[inline]
    fn read(&self, x: &[R]) -> R {
        self.interpolate(x)
    }
}

/// Snapshots `u(t_k, ·)` on a common spatial grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceTimeGrid<R> {
    pub times: Vec<R>,
    pub slices: Vec<GridFunction<R>>,
}

impl<R: Real> SpaceTimeGrid<R> {
    pub fn last(&self) -> &GridFunction<R> {
        self.slices.last().expect("space-time grid has at least one slice")
    }

    /// Slice whose time is closest to `t`.
    pub fn at_time(&self, t: R) -> &GridFunction<R> {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (*a.1 - t).abs().partial_cmp(&(*b.1 - t).abs()).unwrap())
            .map(|(k, _)| k)
            .unwrap_or(0);
        &self.slices[k]
    }

    /// Linear in time between the bracketing slices, multilinear in space.
    pub fn interpolate(&self, t: R, x: &[R]) -> R {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.slices[0].interpolate(x);
        }
        if t >= self.times[n - 1] {
            return self.slices[n - 1].interpolate(x);
        }
        let k = self.times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let a = self.slices[k].interpolate(x);
        let b = self.slices[k + 1].interpolate(x);
        a + w * (b - a)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", GridFunction::<R>::csv_header(self.last().dim(), true))?;
        for (t, g) in self.times.iter().zip(&self.slices) {
            g.write_csv_rows(Some(*t), out)?;
        }
        Ok(())
    }
}

pub fn linspace<R: Real>(a: R, b: R, n: usize) -> Vec<R> {
    let h = (b - a) / R::of_usize(n - 1);
    (0..n).map(|i| if i + 1 == n { b } else { a + h * R::of_usize(i) }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_axes() {
        assert!(GridFunction::new(vec![vec![0.0, 0.0]], vec![1.0, 1.0], Extension::Clamp).is_err());
        assert!(GridFunction::new(vec![vec![0.0, 1.0]], vec![1.0], Extension::Clamp).is_err());
        assert!(GridFunction::new(vec![vec![0.0, 1.0]], vec![1.0, f64::NAN], Extension::Clamp).is_err());
    }

    #[test]
    fn extension_rules() {
        let g = GridFunction::new(vec![vec![0.0, 1.0]], vec![2.0, 4.0], Extension::Constant { value: 0.0 }).unwrap();
        assert_eq!(g.interpolate(&[0.5]), 3.0);
        assert_eq!(g.interpolate(&[1.5]), 0.0);
        let c = GridFunction::new(vec![vec![0.0, 1.0]], vec![2.0, 4.0], Extension::Clamp).unwrap();
        assert_eq!(c.interpolate(&[1.5]), 4.0);
        assert_eq!(c.interpolate(&[-1.0]), 2.0);
    }

    #[test]
    fn bilinear_reproduces_bilinear_functions() {
        let axes = vec![linspace(0.0, 1.0, 5), vec![0.0, 0.3, 1.0, 2.0]];
        let f = |x: f64, y: f64| 1.0 + 2.0 * x - y + 0.5 * x * y;
        let mut g = GridFunction::new(axes.clone(), vec![0.0; 20], Extension::Clamp).unwrap();
        for i in 0..g.len() {
            let p = g.point(i);
            g.values[i] = f(p[0], p[1]);
        }
        for &(x, y) in &[(0.1, 0.2), (0.77, 1.5), (0.5, 0.3), (1.0, 2.0)] {
            assert_relative_eq!(g.interpolate(&[x, y]), f(x, y), epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_rows() {
        let g = GridFunction::uniform_1d(0.0, 1.0, 3, Extension::Clamp).unwrap();
        let st = SpaceTimeGrid { times: vec![0.0, 0.5], slices: vec![g.clone(), g] };
        let mut buf = Vec::new();
        st.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,x_1,value,std_error");
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().nth(2).unwrap(), "0,0.5,0,0");
    }

    proptest! {
        #[test]
        fn interpolant_matches_nodes_and_is_bounded(vals in prop::collection::vec(-10.0f64..10.0, 6), x in 0.0f64..1.0) {
            let g = GridFunction::new(vec![linspace(0.0, 1.0, 6)], vals.clone(), Extension::Clamp).unwrap();
            for i in 0..6 {
                prop_assert!((g.interpolate(&g.point(i)) - vals[i]).abs() < 1e-12);
            }
            let v = g.interpolate(&[x]);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
