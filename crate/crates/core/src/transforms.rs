//! The change of unknown `w = Φ(u)` that turns `∂_t u - ½Δu + h(u)|∇u|² = μ`
//! into the measure-data problem `∂_t w - ½Δw = H(w)·μ`, with
//! `G(s) = 2∫_0^s h`, `Φ(s) = ∫_0^s e^{-G}` and `H = e^{-G∘Φ^{-1}}`.

use std::io::Write;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::feynman_kac::adaptive_simpson;
use crate::func::CoefFn;
use crate::grid::GridFunction;
use crate::real::Real;

/// A continuous `h` with `h(s)·s ≥ 0`.
#[derive(Clone)]
pub struct SignNonlinearity {
    name: String,
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    probe: Vec<f64>,
}

impl std::fmt::Debug for SignNonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SignNonlinearity({})", self.name)
    }
}

impl SignNonlinearity {
    /// Builds `h` and checks the sign condition on `[-probe_max, probe_max]`.
    pub fn new(name: impl Into<String>, h: impl Fn(f64) -> f64 + Send + Sync + 'static, probe_max: f64) -> Result<Self> {
        let probe = (0..=400).map(|i| -probe_max + 2.0 * probe_max * i as f64 / 400.0).collect();
        let out = Self { name: name.into(), h: Arc::new(h), probe };
        out.validate()?;
        Ok(out)
    }

    pub fn zero() -> Self {
        Self { name: "0".into(), h: Arc::new(|_| 0.0), probe: vec![0.0] }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.h)(s)
    }

    pub fn validate(&self) -> Result<()> {
        for &s in &self.probe {
            let v = self.eval(s);
            if !v.is_finite() || v * s < -1e-14 {
                return Err(LabError::SignCondition(s));
            }
        }
        Ok(())
    }
}

/// Tabulated `G`, `Φ` on a uniform grid over `[-s_max, s_max]` with cubic
/// Hermite interpolation between nodes, using the exact derivatives `G' = 2h`
/// and `Φ' = e^{-G}`.
#[derive(Clone, Debug)]
pub struct TransformTriple {
    h: SignNonlinearity,
    s_max: f64,
    quad_tol: f64,
    nodes: Vec<f64>,
    g: Vec<f64>,
    phi: Vec<f64>,
    /// `e^{-G}` at the nodes.
    dphi: Vec<f64>,
    /// `H` and `H' = -2h(Φ^{-1})` on a uniform grid over `[0, Φ(s_max)]`.
    h_table: Vec<(f64, f64)>,
}

/// Tabulation cells per unit of `s`.
const CELLS_PER_UNIT: f64 = 200.0;

/// Cells of the `H` table on `[0, Φ(s_max)]`.
const H_CELLS: usize = 4096;

fn hermite(t: f64, width: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * width * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * width * d1
}

pub fn build_transform(h: &SignNonlinearity, s_max: f64, quad_tol: f64) -> Result<TransformTriple> {
    h.validate()?;
    if !(s_max > 0.0 && s_max.is_finite()) || !(quad_tol > 0.0) {
        return Err(LabError::InvalidParameter(format!("need s_max > 0 and quad_tol > 0, got {s_max}, {quad_tol}")));
    }
    let half = ((s_max * CELLS_PER_UNIT).ceil() as usize).max(16);
    let width = s_max / half as f64;
    let n = 2 * half + 1;
    let nodes: Vec<f64> = (0..n).map(|i| -s_max + width * i as f64).collect();
    let cell_tol = quad_tol / n as f64;
    let hf = |t: f64| 2.0 * h.eval(t);
    let mut g = vec![0.0; n];
    for i in half + 1..n {
        g[i] = g[i - 1] + adaptive_simpson(&hf, nodes[i - 1], nodes[i], cell_tol)?;
    }
    for i in (0..half).rev() {
        g[i] = g[i + 1] - adaptive_simpson(&hf, nodes[i], nodes[i + 1], cell_tol)?;
    }
    let mut phi = vec![0.0; n];
    for i in half + 1..n {
        let (a, ga) = (nodes[i - 1], g[i - 1]);
        let f = |t: f64| (-(ga + adaptive_simpson(&hf, a, t, cell_tol * 1e-2).unwrap_or(f64::NAN))).exp();
        phi[i] = phi[i - 1] + adaptive_simpson(&f, a, nodes[i], cell_tol)?;
    }
    for i in (0..half).rev() {
        let (b, gb) = (nodes[i + 1], g[i + 1]);
        let f = |t: f64| (-(gb - adaptive_simpson(&hf, t, b, cell_tol * 1e-2).unwrap_or(f64::NAN))).exp();
        phi[i] = phi[i + 1] - adaptive_simpson(&f, nodes[i], b, cell_tol)?;
    }
    if phi.iter().chain(g.iter()).any(|v| !v.is_finite()) {
        return Err(LabError::Quadrature("non-finite transform table".into()));
    }
    let dphi = g.iter().map(|v| (-v).exp()).collect();
    let mut out = TransformTriple { h: h.clone(), s_max, quad_tol, nodes, g, phi, dphi, h_table: Vec::new() };
    let hi = out.phi_range().1;
    let mut table = Vec::with_capacity(H_CELLS + 1);
    for i in 0..=H_CELLS {
        let w = hi * i as f64 / H_CELLS as f64;
        let s = out.phi_inv(w)?;
        table.push(((-out.g(s)?).exp(), -2.0 * h.eval(s)));
    }
    out.h_table = table;
    Ok(out)
}

impl TransformTriple {
    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    /// `(Φ(-s_max), Φ(s_max))`, the range on which `Φ^{-1}` and `H` are available.
    pub fn phi_range(&self) -> (f64, f64) {
        (self.phi[0], *self.phi.last().unwrap())
    }

    fn cell(&self, s: f64) -> (usize, f64) {
        let width = self.nodes[1] - self.nodes[0];
        let k = (((s + self.s_max) / width).floor() as isize).clamp(0, self.nodes.len() as isize - 2) as usize;
        (k, (s - self.nodes[k]) / width)
    }

    fn check_s(&self, s: f64) -> Result<()> {
        if s.abs() > self.s_max * (1.0 + 1e-12) || !s.is_finite() {
            return Err(LabError::Range(format!("s = {s} outside the tabulated [-{0}, {0}]", self.s_max)));
        }
        Ok(())
    }

    pub fn g(&self, s: f64) -> Result<f64> {
        self.check_s(s)?;
        let (k, t) = self.cell(s);
        let w = self.nodes[1] - self.nodes[0];
        let d0 = 2.0 * self.h.eval(self.nodes[k]);
        let d1 = 2.0 * self.h.eval(self.nodes[k + 1]);
        Ok(hermite(t, w, self.g[k], self.g[k + 1], d0, d1))
    }

    pub fn phi(&self, s: f64) -> Result<f64> {
        self.check_s(s)?;
        let (k, t) = self.cell(s);
        Ok(self.phi_in_cell(k, t))
    }

    fn phi_in_cell(&self, k: usize, t: f64) -> f64 {
        let w = self.nodes[1] - self.nodes[0];
        hermite(t, w, self.phi[k], self.phi[k + 1], self.dphi[k], self.dphi[k + 1])
    }

    /// `Φ^{-1}(w)` by bisection, first over table cells and then inside the cell.
    pub fn phi_inv(&self, w: f64) -> Result<f64> {
        let (lo, hi) = self.phi_range();
        if !(w >= lo && w <= hi) {
            return Err(LabError::Range(format!("w = {w} outside Φ range ({lo}, {hi})")));
        }
        if w == 0.0 {
            return Ok(0.0);
        }
        let k = match self.phi.partition_point(|&p| p <= w) {
            0 => 0,
            i => (i - 1).min(self.nodes.len() - 2),
        };
        let (mut a, mut b) = (0.0, 1.0);
        let width = self.nodes[1] - self.nodes[0];
        while (b - a) * width > 0.25 * self.quad_tol {
            let m = 0.5 * (a + b);
            if self.phi_in_cell(k, m) <= w {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(self.nodes[k] + 0.5 * (a + b) * width)
    }

    /// `H(w) = e^{-G(Φ^{-1}(w))}`.
    pub fn h_of(&self, w: f64) -> Result<f64> {
        Ok((-self.g(self.phi_inv(w)?)?).exp())
    }

    /// `H(w⁺)`, held constant beyond the tabulated range. `H` peaks at `w = 0`
    /// and is nonincreasing only on `w ≥ 0`, which is where nonnegative data
    /// keep the solution.
    pub fn h_extended(&self, w: f64) -> f64 {
        let (_, hi) = self.phi_range();
        let w = if w.is_nan() { 0.0 } else { w.clamp(0.0, hi) };
        let width = hi / H_CELLS as f64;
        let k = ((w / width) as usize).min(H_CELLS - 1);
        let t = (w - k as f64 * width) / width;
        let (a, b) = (self.h_table[k], self.h_table[k + 1]);
        hermite(t, width, a.0, b.0, a.1, b.1)
    }

    /// `H` as a driver `g(x, y) = H(y)` of the measure-data problem.
    pub fn h_coefficient<R: Real>(self: &Arc<Self>) -> CoefFn<R> {
        let me = self.clone();
        CoefFn::new(format!("H[{}]", self.h.name()), move |_x: &[R], y: R| R::of(me.h_extended(y.as_f64())))
    }

    /// Writes `(s, G, Φ)` at the tabulation nodes.
    pub fn write_forward_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "s,G,Phi")?;
        for i in 0..self.nodes.len() {
            writeln!(out, "{},{},{}", self.nodes[i], self.g[i], self.phi[i])?;
        }
        Ok(())
    }

    /// Writes `(w, H, Φ^{-1})` at `n` equispaced points of the Φ range.
    pub fn write_inverse_csv<W: Write>(&self, n: usize, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "w,H,Phi_inv")?;
        let (lo, hi) = self.phi_range();
        for i in 0..n.max(2) {
            let w = (lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).clamp(lo, hi);
            let s = self.phi_inv(w).map_err(std::io::Error::other)?;
            writeln!(out, "{w},{},{s}", (-self.g(s).map_err(std::io::Error::other)?).exp())?;
        }
        Ok(())
    }
}

/// `u = Φ^{-1}(w)` pointwise.
pub fn push_solution<R: Real>(w: &GridFunction<R>, triple: &TransformTriple) -> Result<GridFunction<R>> {
    let mut out = Vec::with_capacity(w.len());
    for (p, &v) in w.values.iter().enumerate() {
        let s = triple.phi_inv(v.as_f64()).map_err(|e| {
            LabError::Range(format!("grid point {p} at {:?}: {e}", w.point(p)))
        })?;
        out.push(R::of(s));
    }
    w.with_values(out)
}

/// `w = Φ(u)` pointwise.
pub fn pull_solution<R: Real>(u: &GridFunction<R>, triple: &TransformTriple) -> Result<GridFunction<R>> {
    let mut out = Vec::with_capacity(u.len());
    for (p, &v) in u.values.iter().enumerate() {
        let w = triple.phi(v.as_f64()).map_err(|e| {
            LabError::Range(format!("grid point {p} at {:?}: {e}", u.point(p)))
        })?;
        out.push(R::of(w));
    }
    u.with_values(out)
}

/// Table half-width covering solutions of the gradient problem: by comparison
/// with `h = 0`, `|u| ≤ sup|φ| + sup R_0 μ`, widened by `margin` and at least 1.
pub fn s_max_bound(sup_phi: f64, sup_potential: f64, margin: f64) -> f64 {
    (margin.max(1.0) * (sup_phi.abs() + sup_potential.abs())).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quadratic() -> TransformTriple {
        let h = SignNonlinearity::new("s", |s| s, 8.0).unwrap();
        build_transform(&h, 6.0, 1e-8).unwrap()
    }

    #[test]
    fn zero_nonlinearity_is_identity() {
        let t = build_transform(&SignNonlinearity::zero(), 3.0, 1e-8).unwrap();
        for &s in &[-2.5, -0.3, 0.0, 1.7] {
            assert_abs_diff_eq!(t.g(s).unwrap(), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(t.phi(s).unwrap(), s, epsilon = 1e-12);
            assert_abs_diff_eq!(t.h_of(s).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gaussian_transform_values() {
        let t = quadratic();
        assert_abs_diff_eq!(t.g(1.5).unwrap(), 2.25, epsilon = 1e-10);
        assert_abs_diff_eq!(t.phi(1.0).unwrap(), 0.746_824_132_812_427, epsilon = 1e-9);
        assert_abs_diff_eq!(t.phi_range().1, std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.h_of(t.phi(1.0).unwrap()).unwrap(), (-1.0f64).exp(), epsilon = 1e-7);
    }

    #[test]
    fn round_trip_and_h_shape() {
        let t = quadratic();
        // beyond |s| = 3 the slope e^{-s²} makes Φ numerically flat
        for i in 0..=60 {
            let s = -3.0 + 0.1 * i as f64;
            let back = t.phi_inv(t.phi(s).unwrap()).unwrap();
            assert!((back - s).abs() <= 2.0 * t.quad_tol(), "s = {s}, back = {back}");
        }
        let (lo, hi) = t.phi_range();
        let mut prev = f64::INFINITY;
        let mut seen_peak = false;
        for i in 0..=200 {
            let w = lo + (hi - lo) * i as f64 / 200.0;
            let v = t.h_of(w).unwrap();
            assert!(v > 0.0 && v <= 1.0 + 1e-12);
            let e = (t.h_extended(w) - t.h_of(w.max(0.0)).unwrap()).abs();
            assert!(e < 1e-7, "w = {w}, hi = {hi}, err = {e}");
            if w >= 0.0 {
                if seen_peak {
                    assert!(v <= prev + 1e-12);
                }
                seen_peak = true;
                prev = v;
            }
        }
        assert_abs_diff_eq!(t.h_of(0.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sign_condition_rejected() {
        assert!(matches!(SignNonlinearity::new("-s", |s| -s, 1.0), Err(LabError::SignCondition(_))));
    }

    #[test]
    fn push_pull_grids() {
        let t = quadratic();
        let g = GridFunction::uniform_1d(0.0, 1.0, 5, crate::grid::Extension::Clamp).unwrap();
        let ones = g.with_values(vec![1.0; 5]).unwrap();
        let w = pull_solution(&ones, &t).unwrap();
        assert_abs_diff_eq!(w.values[2], 0.746_824_132_812_427, epsilon = 1e-9);
        let back = push_solution(&w, &t).unwrap();
        assert!(back.sup_abs_diff(&ones) <= 2e-8);
        let zero = g.with_values(vec![0.0; 5]).unwrap();
        assert_eq!(push_solution(&zero, &t).unwrap().sup_abs(), 0.0);
        let bad = g.with_values(vec![0.0, 0.0, 0.95, 0.0, 0.0]).unwrap();
        let err = push_solution(&bad, &t).unwrap_err();
        assert!(format!("{err}").contains("grid point 2"));
    }

    #[test]
    fn csv_tables() {
        let t = build_transform(&SignNonlinearity::new("s", |s| s, 2.0).unwrap(), 1.0, 1e-8).unwrap();
        let mut a = Vec::new();
        t.write_forward_csv(&mut a).unwrap();
        let mut b = Vec::new();
        t.write_inverse_csv(11, &mut b).unwrap();
        assert!(String::from_utf8(a).unwrap().starts_with("s,G,Phi\n"));
        assert_eq!(String::from_utf8(b).unwrap().lines().count(), 12);
    }
}
