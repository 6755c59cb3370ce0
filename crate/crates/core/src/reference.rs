//! Deterministic one-dimensional oracles: Crank–Nicolson for the parabolic
//! problem, a tridiagonal Picard solver for the elliptic one, and a dense
//! discretization of the killed fractional Laplacian.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::gamma;
use crate::error::{LabError, Result};
use crate::func::{CoefFn, SpatialFn};
use crate::functional::{MeasureKind, SmoothMeasure};
use crate::grid::{Extension, GridFunction};

/// Reading of the Neumann data in `∂_t u = ½u'' + ...` with flux `g`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeumannConvention {
    /// `½ ∂_n u = g`: the flux of the ½Δ generator equals `g`.
    Half,
    /// `∂_n u = g`.
    Full,
}

impl NeumannConvention {
    /// Factor multiplying `g/h` in the boundary row.
    pub fn kappa(self) -> f64 {
        match self {
            Self::Half => 2.0,
            Self::Full => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FdBoundary {
    Dirichlet0,
    NeumannFlux { convention: NeumannConvention },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FdGrid {
    pub a: f64,
    pub b: f64,
    pub n_cells: usize,
    pub dt_fd: f64,
    pub boundary: FdBoundary,
}

impl FdGrid {
    pub fn new(a: f64, b: f64, n_cells: usize, dt_fd: f64, boundary: FdBoundary) -> Result<Self> {
        let g = Self { a, b, n_cells, dt_fd, boundary };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a < self.b) || self.n_cells < 8 {
            return Err(LabError::InvalidParameter("FD grid needs a < b and at least 8 cells".into()));
        }
        if !(self.dt_fd > 0.0) || self.dt_fd > self.h() {
            return Err(LabError::InvalidParameter(format!(
                "FD time step must satisfy 0 < dt <= h = {}",
                self.h()
            )));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / self.n_cells as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|i| self.a + self.h() * i as f64).collect()
    }

    /// Twice as many cells and half the time step.
    pub fn refined(&self) -> Self {
        Self { n_cells: 2 * self.n_cells, dt_fd: 0.5 * self.dt_fd, ..*self }
    }
}

/// `∂_t u = ½u'' - λu + f(x,u) + g(x,u)·μ - h(u)|u'|²` in one dimension.
#[derive(Clone)]
pub struct FdProblem {
    pub f: CoefFn<f64>,
    pub g: CoefFn<f64>,
    pub measure: SmoothMeasure<f64>,
    pub phi: SpatialFn<f64>,
    pub lambda: f64,
    /// Gradient nonlinearity `h` of the quadratic-gradient problem.
    pub gradient: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    /// Elliptic only: put the mass of a mollified point measure on the nearest node.
    pub exact_point: bool,
}

impl std::fmt::Debug for FdProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FdProblem")
            .field("f", &self.f)
            .field("g", &self.g)
            .field("measure", &self.measure)
            .field("phi", &self.phi)
            .field("lambda", &self.lambda)
            .field("gradient", &self.gradient.is_some())
            .finish()
    }
}

impl FdProblem {
    pub fn new(f: CoefFn<f64>, g: CoefFn<f64>, measure: SmoothMeasure<f64>, phi: SpatialFn<f64>) -> Self {
        Self { f, g, measure, phi, lambda: 0.0, gradient: None, exact_point: false }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_gradient(mut self, h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(h));
        self
    }

    pub fn with_exact_point(mut self) -> Self {
        self.exact_point = true;
        self
    }

    fn check(&self, grid: &FdGrid) -> Result<()> {
        grid.validate()?;
        let surface = self.measure.is_surface();
        match grid.boundary {
            FdBoundary::Dirichlet0 if surface => {
                Err(LabError::Unsupported("surface data needs the Neumann boundary".into()))
            }
            FdBoundary::NeumannFlux { .. } if self.gradient.is_some() => {
                Err(LabError::Unsupported("gradient term is only implemented with Dirichlet data".into()))
            }
            _ => Ok(()),
        }
    }

    /// Source density `β` sampled at the nodes; the point variant when exact.
    fn density(&self, grid: &FdGrid) -> Vec<f64> {
        let x = grid.nodes();
        if let (true, MeasureKind::MollifiedPoint { center, mass, .. }) = (self.exact_point, &self.measure.kind) {
            let mut d = vec![0.0; x.len()];
            let k = ((center[0] - grid.a) / grid.h()).round() as usize;
            d[k.min(x.len() - 1)] = mass / grid.h();
            return d;
        }
        x.iter().map(|&xi| self.measure.density(&[xi])).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FdSolution {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    /// `max |u_h - u_{h/2}| / 3` over shared nodes, when computed.
    pub richardson_error: Option<f64>,
}

impl FdSolution {
    /// Piecewise-linear read.
    pub fn at(&self, x: f64) -> f64 {
        let n = self.x.len();
        let h = self.x[1] - self.x[0];
        let s = ((x - self.x[0]) / h).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let t = s - k as f64;
        (1.0 - t) * self.values[k] + t * self.values[k + 1]
    }

    /// Values read at the points of `grid`.
    pub fn on_grid(&self, grid: &GridFunction<f64>) -> Result<GridFunction<f64>> {
        grid.with_values((0..grid.len()).map(|p| self.at(grid.point(p)[0])).collect())
    }

    pub fn to_grid(&self, extension: Extension<f64>) -> Result<GridFunction<f64>> {
        GridFunction::new(vec![self.x.clone()], self.values.clone(), extension)
    }
}

/// Solves `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i`.
pub fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = if i + 1 < n { c[i] / m } else { 0.0 };
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Tridiagonal `½D² - λ` restricted to the unknowns.
struct Operator {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
    /// Index of the first unknown among the nodes.
    offset: usize,
}

impl Operator {
    fn new(grid: &FdGrid, lambda: f64) -> Self {
        let n = grid.n_cells;
        let r = 0.5 / (grid.h() * grid.h());
        match grid.boundary {
            FdBoundary::Dirichlet0 => {
                let m = n - 1;
                Self { lo: vec![r; m], di: vec![-2.0 * r - lambda; m], up: vec![r; m], offset: 1 }
            }
            FdBoundary::NeumannFlux { .. } => {
                let m = n + 1;
                let mut lo = vec![r; m];
                let mut up = vec![r; m];
                up[0] = 2.0 * r;
                lo[m - 1] = 2.0 * r;
                Self { lo, di: vec![-2.0 * r - lambda; m], up, offset: 0 }
            }
        }
    }

    fn len(&self) -> usize {
        self.di.len()
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let m = self.len();
        (0..m)
            .map(|i| {
                let mut v = self.di[i] * u[i];
                if i > 0 {
                    v += self.lo[i] * u[i - 1];
                }
                if i + 1 < m {
                    v += self.up[i] * u[i + 1];
                }
                v
            })
            .collect()
    }

    /// Solves `(s·I - c·A) x = d`.
    fn solve_shifted(&self, s: f64, c: f64, d: &[f64]) -> Vec<f64> {
        let a: Vec<f64> = self.lo.iter().map(|v| -c * v).collect();
        let b: Vec<f64> = self.di.iter().map(|v| s - c * v).collect();
        let up: Vec<f64> = self.up.iter().map(|v| -c * v).collect();
        thomas(&a, &b, &up, d)
    }
}

/// Nonlinear and source terms at the unknowns for the current state.
fn forcing(problem: &FdProblem, grid: &FdGrid, op: &Operator, beta: &[f64], u: &[f64]) -> Vec<f64> {
    let x = grid.nodes();
    let h = grid.h();
    let m = op.len();
    let full = |i: isize| -> f64 {
        // node value with the Dirichlet zeros at the ends
        if i < op.offset as isize || i >= (op.offset + m) as isize {
            0.0
        } else {
            u[i as usize - op.offset]
        }
    };
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let i = k + op.offset;
        let y = u[k];
        let mut v = problem.f.eval(&[x[i]], y);
        if beta[i] != 0.0 {
            v += problem.g.eval(&[x[i]], y) * beta[i];
        }
        if let Some(hg) = &problem.gradient {
            let du = (full(i as isize + 1) - full(i as isize - 1)) / (2.0 * h);
            v -= hg(y) * du * du;
        }
        if let FdBoundary::NeumannFlux { convention } = grid.boundary {
            if k == 0 || k == m - 1 {
                let w = problem.measure.surface_weight(&[x[i]]);
                if w != 0.0 {
                    v += convention.kappa() * w * problem.g.eval(&[x[i]], y) / h;
                }
            }
        }
        out.push(v);
    }
    out
}

fn fd_parabolic_single(problem: &FdProblem, t_final: f64, grid: &FdGrid) -> Result<Vec<f64>> {
    problem.check(grid)?;
    let op = Operator::new(grid, problem.lambda);
    let x = grid.nodes();
    let beta = problem.density(grid);
    let m = op.len();
    let mut u: Vec<f64> = (0..m).map(|k| problem.phi.eval(&[x[k + op.offset]])).collect();
    let steps = (t_final / grid.dt_fd).ceil().max(1.0) as usize;
    let dt = t_final / steps as f64;
    for _ in 0..steps {
        let au = op.apply(&u);
        let n0 = forcing(problem, grid, &op, &beta, &u);
        let rhs = |n: &[f64]| -> Vec<f64> { (0..m).map(|i| u[i] + 0.5 * dt * au[i] + dt * n[i]).collect() };
        let pred = op.solve_shifted(1.0, 0.5 * dt, &rhs(&n0));
        let mid: Vec<f64> = u.iter().zip(&pred).map(|(a, b)| 0.5 * (a + b)).collect();
        let n1 = forcing(problem, grid, &op, &beta, &mid);
        let next = op.solve_shifted(1.0, 0.5 * dt, &rhs(&n1));
        let resid = next.iter().zip(&pred).fold(0.0f64, |r, (a, b)| r.max((a - b).abs()));
        if !resid.is_finite() || resid > 1e6 {
            return Err(LabError::NonConvergence {
                context: "Crank-Nicolson corrector".into(),
                iterations: 1,
                last_change: resid,
                trace: vec![resid],
            });
        }
        u = next;
    }
    Ok(embed(&op, &u, x.len()))
}

fn embed(op: &Operator, u: &[f64], n_nodes: usize) -> Vec<f64> {
    let mut full = vec![0.0; n_nodes];
    full[op.offset..op.offset + u.len()].copy_from_slice(u);
    full
}

fn richardson(coarse: &[f64], fine: &[f64]) -> f64 {
    coarse.iter().enumerate().fold(0.0f64, |m, (i, c)| m.max((c - fine[2 * i]).abs())) / 3.0
}

/// Crank–Nicolson in the linear part with a lagged nonlinearity and one
/// corrector pass; the Richardson error compares against the refined grid.
pub fn fd_parabolic(problem: &FdProblem, t_final: f64, grid: &FdGrid) -> Result<FdSolution> {
    if !(t_final > 0.0) {
        return Err(LabError::InvalidParameter("T must be > 0".into()));
    }
    let coarse = fd_parabolic_single(problem, t_final, grid)?;
    let fine = fd_parabolic_single(problem, t_final, &grid.refined())?;
    Ok(FdSolution { x: grid.nodes(), values: coarse.clone(), richardson_error: Some(richardson(&coarse, &fine)) })
}

/// Observed order `log2(|u_h - u_{h/2}| / |u_{h/2} - u_{h/4}|)` at the shared nodes.
pub fn fd_parabolic_order(problem: &FdProblem, t_final: f64, grid: &FdGrid) -> Result<f64> {
    let g2 = grid.refined();
    let a = fd_parabolic_single(problem, t_final, grid)?;
    let b = fd_parabolic_single(problem, t_final, &g2)?;
    let c = fd_parabolic_single(problem, t_final, &g2.refined())?;
    let e1 = richardson(&a, &b);
    let e2 = a.iter().enumerate().fold(0.0f64, |m, (i, _)| m.max((b[2 * i] - c[4 * i]).abs())) / 3.0;
    Ok((e1 / e2).log2())
}

/// Picard iteration on `-½v'' + (λ + shift)v = f(x,v) + shift·v + g(x,v)·μ`.
#[derive(Clone, Copy, Debug)]
pub struct FdPicard {
    pub shift: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FdPicard {
    fn default() -> Self {
        Self { shift: 0.0, tol: 1e-12, max_iter: 500 }
    }
}

pub fn fd_elliptic(problem: &FdProblem, grid: &FdGrid, picard: FdPicard) -> Result<FdSolution> {
    problem.check(grid)?;
    if problem.gradient.is_some() {
        return Err(LabError::Unsupported("gradient term in the elliptic oracle".into()));
    }
    if matches!(grid.boundary, FdBoundary::NeumannFlux { .. }) && problem.lambda + picard.shift <= 0.0 {
        return Err(LabError::Divergence("Neumann elliptic problem needs λ > 0".into()));
    }
    let op = Operator::new(grid, problem.lambda + picard.shift);
    let beta = problem.density(grid);
    let m = op.len();
    let mut v = vec![0.0; m];
    let mut trace = Vec::new();
    for _ in 0..picard.max_iter {
        let mut rhs = forcing(problem, grid, &op, &beta, &v);
        for (r, vi) in rhs.iter_mut().zip(&v) {
            *r += picard.shift * vi;
        }
        let next = op.solve_shifted(0.0, 1.0, &rhs);
        let change = next.iter().zip(&v).fold(0.0f64, |c, (a, b)| c.max((a - b).abs()));
        trace.push(change);
        v = next;
        if change <= picard.tol * (1.0 + v.iter().fold(0.0f64, |s, a| s.max(a.abs()))) {
            return Ok(FdSolution { x: grid.nodes(), values: embed(&op, &v, grid.n_cells + 1), richardson_error: None });
        }
    }
    Err(LabError::NonConvergence {
        context: "finite-difference Picard iteration".into(),
        iterations: picard.max_iter,
        last_change: *trace.last().unwrap_or(&f64::NAN),
        trace,
    })
}

/// Discrete Green matrix `G_h(x_i, x_j)` of `-½D²` with Dirichlet data at the interior nodes.
pub fn fd_green_matrix(a: f64, b: f64, n_cells: usize) -> Result<Vec<Vec<f64>>> {
    let grid = FdGrid::new(a, b, n_cells, (b - a) / n_cells as f64, FdBoundary::Dirichlet0)?;
    let op = Operator::new(&grid, 0.0);
    let m = op.len();
    let mut cols = Vec::with_capacity(m);
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0 / grid.h();
        cols.push(op.solve_shifted(0.0, 1.0, &e));
    }
    Ok((0..m).map(|i| (0..m).map(|j| cols[j][i]).collect()).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct FractionalSolution {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FractionalSolution {
    pub fn at(&self, x: f64) -> f64 {
        FdSolution { x: self.x.clone(), values: self.values.clone(), richardson_error: None }.at(x)
    }
}

/// Normalizing constant of `(-Δ)^{α/2}` in one dimension, symbol `|ξ|^α`.
pub fn fractional_constant(alpha: f64) -> f64 {
    alpha * 2f64.powf(alpha - 1.0) * gamma(0.5 * (1.0 + alpha)) / (std::f64::consts::PI.sqrt() * gamma(1.0 - 0.5 * alpha))
}

/// `∫_lo^hi z^{p} dz`.
fn power_integral(p: f64, lo: f64, hi: f64) -> f64 {
    if (p + 1.0).abs() < 1e-14 {
        (hi / lo).ln()
    } else {
        (hi.powf(p + 1.0) - lo.powf(p + 1.0)) / (p + 1.0)
    }
}

/// Solves `(-Δ)^{α/2} v = rhs` in `(a, b)` with `v = 0` outside, writing
/// the operator as `C ∫_0^∞ (2v(x) - v(x+z) - v(x-z)) z^{-1-α} dz`: the second
/// difference on `[0, h]`, the piecewise-linear interpolant integrated exactly
/// against the kernel beyond, and the closed-form tail where both reflections
/// of `x` lie outside the interval.
pub fn fractional_elliptic(
    alpha: f64,
    interval: (f64, f64),
    rhs: &dyn Fn(f64) -> f64,
    n_cells: usize,
) -> Result<FractionalSolution> {
    let (a, b) = interval;
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(LabError::InvalidParameter(format!("stable index must lie in (0, 2), got {alpha}")));
    }
    if !(a < b) || n_cells < 8 {
        return Err(LabError::InvalidParameter("need a < b and at least 8 cells".into()));
    }
    let mut warnings = Vec::new();
    if alpha > 1.9 {
        warnings.push(format!("index {alpha} is close to 2: the dense system is poorly conditioned"));
    }
    let h = (b - a) / n_cells as f64;
    let c = fractional_constant(alpha);
    let m = n_cells - 1;
    let near = h.powf(-alpha) / (2.0 - alpha);
    // weights of w_k over [kh, (k+1)h] for the linear interpolant in z
    let cell = |k: usize| -> (f64, f64) {
        let lo = k as f64 * h;
        let hi = lo + h;
        let i0 = power_integral(-1.0 - alpha, lo, hi);
        let i1 = power_integral(-alpha, lo, hi);
        // w(z) = w_k (hi - z)/h + w_{k+1} (z - lo)/h
        ((hi * i0 - i1) / h, (i1 - lo * i0) / h)
    };
    let cells: Vec<(f64, f64)> = (1..=n_cells).map(cell).collect();
    let mut mat = vec![vec![0.0; m]; m];
    for r in 0..m {
        let i = r + 1;
        let kmax = i.max(n_cells - i);
        let row = &mut mat[r];
        let mut add = |j: isize, v: f64| {
            if j >= 1 && j <= m as isize {
                row[(j - 1) as usize] += v;
            }
        };
        // w_k = 2v_i - v_{i+k} - v_{i-k}
        let mut coef_w = vec![0.0; kmax + 1];
        coef_w[1] += near;
        for k in 1..kmax {
            let (wl, wr) = cells[k - 1];
            coef_w[k] += wl;
            coef_w[k + 1] += wr;
        }
        let tail = (kmax as f64 * h).powf(-alpha) / alpha;
        let mut diag = 2.0 * tail;
        for (k, &w) in coef_w.iter().enumerate().skip(1) {
            diag += 2.0 * w;
            add(i as isize + k as isize, -w);
            add(i as isize - k as isize, -w);
        }
        add(i as isize, diag);
        for v in row.iter_mut() {
            *v *= c;
        }
    }
    let x: Vec<f64> = (0..=n_cells).map(|i| a + h * i as f64).collect();
    let f: Vec<f64> = (1..n_cells).map(|i| rhs(x[i])).collect();
    let sol = lu_solve(mat, f)?;
    let mut values = vec![0.0; n_cells + 1];
    values[1..n_cells].copy_from_slice(&sol);
    Ok(FractionalSolution { x, values, warnings })
}

/// Dense LU with partial pivoting.
pub fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        if a[p][k].abs() < 1e-300 {
            return Err(LabError::InvalidParameter("singular system".into()));
        }
        a.swap(k, p);
        b.swap(k, p);
        let (top, rest) = a.split_at_mut(k + 1);
        let pivot = &top[k];
        for (off, row) in rest.iter_mut().enumerate() {
            let l = row[k] / pivot[k];
            if l != 0.0 {
                for j in k..n {
                    row[j] -= l * pivot[j];
                }
                b[k + 1 + off] -= l * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

/// Mean exit time of the symmetric stable process from `(c - r, c + r)`:
/// `Γ(1/2)(r² - (x-c)²)^{α/2} / (2^α Γ(1 + α/2) Γ((1 + α)/2))`.
pub fn stable_exit_time_interval(alpha: f64, center: f64, radius: f64, x: f64) -> f64 {
    let d2 = radius * radius - (x - center) * (x - center);
    if d2 <= 0.0 {
        return 0.0;
    }
    gamma(0.5) * d2.powf(0.5 * alpha) / (2f64.powf(alpha) * gamma(1.0 + 0.5 * alpha) * gamma(0.5 * (1.0 + alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn dirichlet(n: usize, dt: f64) -> FdGrid {
        FdGrid::new(0.0, 1.0, n, dt, FdBoundary::Dirichlet0).unwrap()
    }

    fn linear(phi: SpatialFn<f64>) -> FdProblem {
        FdProblem::new(CoefFn::zero(), CoefFn::zero(), SmoothMeasure::zero(), phi)
    }

    #[test]
    fn thomas_small_system() {
        let x = thomas(&[0.0, 1.0, 1.0], &[4.0, 4.0, 4.0], &[1.0, 1.0, 0.0], &[5.0, 6.0, 5.0]);
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn heat_mode_decay() {
        let p = linear(SpatialFn::new("sin", |x: &[f64]| (PI * x[0]).sin()));
        let s = fd_parabolic(&p, 0.2, &dirichlet(64, 1e-3)).unwrap();
        let exact = (-PI * PI * 0.1).exp();
        assert!((s.at(0.5) - exact).abs() <= 1e-3);
        assert!(s.richardson_error.unwrap() < 1e-3);
        assert!(fd_parabolic_order(&p, 0.2, &dirichlet(16, 1.0 / 64.0)).unwrap() >= 1.9);
    }

    #[test]
    fn elliptic_closed_forms() {
        let g = dirichlet(40, 0.025);
        let unit = FdProblem::new(CoefFn::zero(), CoefFn::constant(1.0), SmoothMeasure::unit_lebesgue(), SpatialFn::zero());
        let v = fd_elliptic(&unit, &g, FdPicard::default()).unwrap();
        for (x, y) in v.x.iter().zip(&v.values) {
            assert!((y - x * (1.0 - x)).abs() < 1e-12);
        }
        let point = FdProblem::new(
            CoefFn::zero(),
            CoefFn::constant(1.0),
            SmoothMeasure::mollified_point(vec![0.5], 1.0, 0.05).unwrap(),
            SpatialFn::zero(),
        )
        .with_exact_point();
        let v = fd_elliptic(&point, &g, FdPicard::default()).unwrap();
        for (x, y) in v.x.iter().zip(&v.values) {
            assert!((y - x.min(1.0 - x)).abs() < 1e-12);
        }
        let lin = FdProblem::new(CoefFn::new("1-y", |_x: &[f64], y: f64| 1.0 - y), CoefFn::zero(), SmoothMeasure::zero(), SpatialFn::zero());
        let g = dirichlet(200, 0.005);
        let v = fd_elliptic(&lin, &g, FdPicard::default()).unwrap();
        let k = 2f64.sqrt();
        let exact = |x: f64| 1.0 - (k * (x - 0.5)).cosh() / (k * 0.5).cosh();
        let h2 = g.h() * g.h();
        for (x, y) in v.x.iter().zip(&v.values) {
            assert!((y - exact(*x)).abs() <= h2, "x = {x}");
        }
    }

    #[test]
    fn green_matrix_is_symmetric_and_exact() {
        let g = fd_green_matrix(0.0, 1.0, 20).unwrap();
        for i in 0..g.len() {
            for j in 0..g.len() {
                assert!((g[i][j] - g[j][i]).abs() <= 1e-12);
                let (x, y) = ((i + 1) as f64 / 20.0, (j + 1) as f64 / 20.0);
                assert!((g[i][j] - crate::feynman_kac::green_kernel(0.0, 1.0, 0.0, x, y)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        let p = FdProblem::new(
            CoefFn::new("-y^3", |_x: &[f64], y: f64| -y * y * y),
            CoefFn::constant(1.0),
            SmoothMeasure::unit_lebesgue(),
            SpatialFn::new("bump", |x: &[f64]| (PI * x[0]).sin().powi(2)),
        );
        let s = fd_parabolic(&p, 0.5, &dirichlet(32, 0.01)).unwrap();
        assert!(s.values.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn neumann_mass_balance() {
        let p = FdProblem::new(CoefFn::zero(), CoefFn::constant(1.0), SmoothMeasure::surface(SpatialFn::constant(1.0)), SpatialFn::zero());
        for (conv, rate) in [(NeumannConvention::Half, 2.0), (NeumannConvention::Full, 1.0)] {
            let g = FdGrid::new(0.0, 1.0, 50, 0.005, FdBoundary::NeumannFlux { convention: conv }).unwrap();
            let s = fd_parabolic(&p, 0.3, &g).unwrap();
            let h = g.h();
            let n = s.values.len();
            let mass: f64 = h * (s.values[1..n - 1].iter().sum::<f64>() + 0.5 * (s.values[0] + s.values[n - 1]));
            assert!((mass - rate * 0.3).abs() < 1e-9, "{conv:?}: {mass}");
        }
    }

    #[test]
    fn fractional_mean_exit_time() {
        let zero = fractional_elliptic(1.0, (-1.0, 1.0), &|_| 0.0, 32).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert!((fractional_constant(1.0) - 1.0 / PI).abs() < 1e-14);
        let exact = stable_exit_time_interval(1.0, 0.0, 1.0, 0.0);
        assert!((exact - 1.0).abs() < 1e-12);
        let coarse = fractional_elliptic(1.0, (-1.0, 1.0), &|_| 1.0, 200).unwrap().at(0.0);
        let fine = fractional_elliptic(1.0, (-1.0, 1.0), &|_| 1.0, 400).unwrap().at(0.0);
        assert!((fine - exact).abs() < (coarse - exact).abs());
        assert!((fine - exact).abs() < 0.02, "fine = {fine}");
        for alpha in [0.5, 1.5] {
            let v = fractional_elliptic(alpha, (-1.0, 1.0), &|_| 1.0, 400).unwrap().at(0.0);
            let e = stable_exit_time_interval(alpha, 0.0, 1.0, 0.0);
            assert!((v - e).abs() / e < 0.03, "alpha = {alpha}: {v} vs {e}");
        }
    }
}
