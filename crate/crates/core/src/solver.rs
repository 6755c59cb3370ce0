//! Nonlinear fixed points: the parabolic problem by backward dynamic
//! programming over time slices and the elliptic problem by Picard iteration,
//! both through their probabilistic representations.

use serde::Serialize;

use crate::domain::DomainSpec;
use crate::error::{LabError, Result};
use crate::estimate::{accumulate, median, McParams};
use crate::feynman_kac::tag;
use crate::func::{CoefFn, FieldRead, SpatialFn};
use crate::functional::{AfIntegrator, SmoothMeasure};
use crate::grid::{Extension, GridFunction, SpaceTimeGrid};
use crate::process::{ProcessSpec, WalkScratch};
use crate::real::Real;
use crate::rng::RngStream;

/// `T_c(y) = ((-c) ∨ y) ∧ c`.
pub fn clamp<R: Real>(y: R, c: R) -> R {
    assert!(c >= R::zero(), "truncation level must be >= 0");
    y.max(-c).min(c)
}

#[derive(Clone, Debug)]
pub struct Coefficients<R> {
    /// Volume driver `f(x, y)`.
    pub f: CoefFn<R>,
    /// Driver `g(x, y)` against `dA^μ`.
    pub g: CoefFn<R>,
    /// Initial datum.
    pub phi: SpatialFn<R>,
    /// Declared one-sided Lipschitz constant of `f` in `y`.
    pub alpha_mono: R,
}

/// Probe set for the sampled monotonicity conditions.
#[derive(Clone, Copy, Debug)]
pub struct MonotonicityProbe<R> {
    pub y_max: R,
    pub n_y: usize,
    pub n_x: usize,
    pub tol: R,
}

impl<R: Real> Default for MonotonicityProbe<R> {
    fn default() -> Self {
        Self { y_max: R::of(4.0), n_y: 17, n_x: 9, tol: R::of(1e-9) }
    }
}

impl<R: Real> Coefficients<R> {
    pub fn new(f: CoefFn<R>, g: CoefFn<R>, phi: SpatialFn<R>, alpha_mono: R) -> Self {
        Self { f, g, phi, alpha_mono }
    }

    /// `f = g = 0`.
    pub fn linear(phi: SpatialFn<R>) -> Self {
        Self::new(CoefFn::zero(), CoefFn::zero(), phi, R::zero())
    }

    pub fn is_y_free(&self) -> bool {
        self.f.is_linear_free() && self.g.is_linear_free()
    }

    /// Checks `(f(x,y)-f(x,y'))(y-y') ≤ α|y-y'|²` and `(g(x,y)-g(x,y'))(y-y') ≤ 0` on probes.
    pub fn check_monotonicity(&self, domain: &DomainSpec<R>, probe: &MonotonicityProbe<R>) -> Result<()> {
        let xs = probe_points(domain, probe.n_x);
        let ys: Vec<R> = (0..probe.n_y)
            .map(|i| -probe.y_max + R::of(2.0) * probe.y_max * R::of_usize(i) / R::of_usize(probe.n_y.max(2) - 1))
            .collect();
        for x in &xs {
            for (i, &y) in ys.iter().enumerate() {
                for &y2 in &ys[i + 1..] {
                    let dy = y - y2;
                    let df = (self.f.eval(x, y) - self.f.eval(x, y2)) * dy;
                    if !df.is_finite() || df > self.alpha_mono * dy * dy + probe.tol {
                        return Err(LabError::Monotonicity(format!(
                            "f violates the one-sided bound with α = {} at x = {x:?}, y = {y}, y' = {y2}",
                            self.alpha_mono
                        )));
                    }
                    let dg = (self.g.eval(x, y) - self.g.eval(x, y2)) * dy;
                    if !dg.is_finite() || dg > probe.tol {
                        return Err(LabError::Monotonicity(format!(
                            "g is not nonincreasing at x = {x:?}, y = {y}, y' = {y2}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn probe_points<R: Real>(domain: &DomainSpec<R>, n: usize) -> Vec<Vec<R>> {
    let Some((lo, hi)) = domain.bounding_box() else {
        let d = domain.dim();
        return (0..n).map(|i| vec![R::of(i as f64 - (n / 2) as f64); d]).collect();
    };
    let d = lo.len();
    let total = n.pow(d as u32);
    let mut out = Vec::new();
    for mut idx in 0..total {
        let mut x = vec![R::zero(); d];
        for i in (0..d).rev() {
            let k = idx % n;
            idx /= n;
            x[i] = lo[i] + (hi[i] - lo[i]) * R::of_usize(k + 1) / R::of_usize(n + 1);
        }
        if domain.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Exponential change of variables `û(t,x) = e^{-αt} u(t,x)` making the
/// volume driver dissipative: `f̂(t,x,y) = e^{-αt} f(x, e^{αt}y) - αy`,
/// `ĝ(t,x,y) = e^{-αt} g(x, e^{αt}y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormalizationRecord<R> {
    pub alpha: R,
    pub applied: bool,
}

impl<R: Real> NormalizationRecord<R> {
    pub fn identity() -> Self {
        Self { alpha: R::zero(), applied: false }
    }

    #[inline]
    pub fn f_hat(&self, f: &CoefFn<R>, t: R, x: &[R], y: R) -> R {
        if !self.applied {
            return f.eval(x, y);
        }
        let e = (self.alpha * t).exp();
        f.eval(x, e * y) / e - self.alpha * y
    }

    #[inline]
    pub fn g_hat(&self, g: &CoefFn<R>, t: R, x: &[R], y: R) -> R {
        if !self.applied {
            return g.eval(x, y);
        }
        let e = (self.alpha * t).exp();
        g.eval(x, e * y) / e
    }

    /// `u(t) = e^{αt} û(t)`.
    pub fn to_original(&self, t: R, v: R) -> R {
        if self.applied {
            (self.alpha * t).exp() * v
        } else {
            v
        }
    }
}

/// Returns the coefficients at `t = 0` of the normalized problem together with
/// the record the solvers use for later times. Identity when `α ≤ 0`.
pub fn normalize_monotone<R: Real>(coeffs: &Coefficients<R>) -> (Coefficients<R>, NormalizationRecord<R>) {
    if !(coeffs.alpha_mono > R::zero()) {
        return (coeffs.clone(), NormalizationRecord::identity());
    }
    let a = coeffs.alpha_mono;
    let f = coeffs.f.clone();
    let shifted = CoefFn::new(format!("{}-{a}y", f.name()), move |x, y| f.eval(x, y) - a * y);
    let out = Coefficients { f: shifted, g: coeffs.g.clone(), phi: coeffs.phi.clone(), alpha_mono: R::zero() };
    (out, NormalizationRecord { alpha: a, applied: true })
}

#[derive(Clone, Debug)]
pub struct ProblemSpec<R> {
    pub process: ProcessSpec<R>,
    pub coefficients: Coefficients<R>,
    pub measure: SmoothMeasure<R>,
}

impl<R: Real> ProblemSpec<R> {
    pub fn new(process: ProcessSpec<R>, coefficients: Coefficients<R>, measure: SmoothMeasure<R>) -> Result<Self> {
        let p = Self { process, coefficients, measure };
        p.validate()?;
        Ok(p)
    }

    pub fn domain(&self) -> &DomainSpec<R> {
        &self.process.domain
    }

    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        self.measure.validate(self.domain())?;
        if self.measure.is_surface() && !self.process.is_reflected() {
            return Err(LabError::InvalidParameter(
                "surface measure needs the reflected process".into(),
            ));
        }
        Ok(())
    }

    /// Validates and checks the monotonicity probes.
    pub fn check(&self, probe: &MonotonicityProbe<R>) -> Result<()> {
        self.validate()?;
        self.coefficients.check_monotonicity(self.domain(), probe)
    }

    /// Grid read rule: the boundary value 0 for killed problems, clamping for reflected ones.
    pub fn extension(&self) -> Extension<R> {
        if self.process.is_killed() {
            Extension::Constant { value: R::zero() }
        } else {
            Extension::Clamp
        }
    }

    /// Uniform grid with `n_points` per axis and this problem's read rule.
    pub fn grid(&self, n_points: usize) -> Result<GridFunction<R>> {
        GridFunction::over_domain(self.domain(), n_points, self.extension())
    }

    /// Grid points where the representation runs; killed paths started on or
    /// outside the boundary have lifetime 0 and carry the cemetery value 0.
    fn active(&self, x: &[R]) -> bool {
        if self.process.is_killed() {
            self.domain().contains(x)
        } else {
            self.domain().closure_contains(x)
        }
    }

    fn has_g(&self) -> bool {
        !self.coefficients.g.is_zero() && !self.measure.is_zero()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ParabolicParams<R> {
    pub mc: McParams<R>,
    pub n_time: usize,
    /// Picard refinements of each slice after the explicit pass.
    pub picard_sweeps: usize,
    /// Optional truncation level `c` applied to values fed to the drivers.
    pub truncation: Option<R>,
    pub probe: MonotonicityProbe<R>,
}

impl<R: Real> ParabolicParams<R> {
    pub fn new(mc: McParams<R>, n_time: usize) -> Self {
        Self { mc, n_time, picard_sweeps: 2, truncation: None, probe: MonotonicityProbe::default() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParabolicSolution<R> {
    /// `u(t_k, ·)` for `t_k = kT/n_time`, with propagated standard errors.
    pub solution: SpaceTimeGrid<R>,
    /// Sup-grid change of each Picard sweep, per slice.
    pub sweep_changes: Vec<Vec<R>>,
    pub normalization: NormalizationRecord<R>,
}

/// Values of the representation at one slice, with step and propagated errors.
struct SliceEstimate<R> {
    values: Vec<R>,
    se: Vec<R>,
}

/// Solves `∂_t u - Lu + λu = f(x,u) + g(x,u)·μ`, `u(0) = φ` on `grid` up to `T`.
///
/// With `Δ = T/n_time` and `u_0 = φ`, each slice solves
/// `u_{k+1}(x) = E_x[e^{-λΔ} u_k(X_Δ) 1_{Δ<ζ} + ∫_0^{Δ∧ζ} e^{-λs}(f(X_s, ũ) ds + g(X_s, ũ) dA_s)]`
/// where `ũ(s, ·) = (1 - s/Δ) U + (s/Δ) u_k` and `U` is `u_k` on the explicit
/// pass and the previous iterate on each Picard sweep. Sweeps reuse the same
/// random streams.
pub fn solve_parabolic<R: Real>(
    problem: &ProblemSpec<R>,
    t_final: R,
    grid: &GridFunction<R>,
    params: &ParabolicParams<R>,
) -> Result<ParabolicSolution<R>> {
    problem.check(&params.probe)?;
    params.mc.validate()?;
    if !(t_final > R::zero()) || params.n_time == 0 {
        return Err(LabError::InvalidParameter("need T > 0 and n_time >= 1".into()));
    }
    let (coeffs, record) = normalize_monotone(&problem.coefficients);
    let delta = t_final / R::of_usize(params.n_time);
    let ext = problem.extension();
    let template = grid.with_values(vec![R::zero(); grid.len()])?.with_extension(ext);

    let phi0: Vec<R> = (0..grid.len())
        .map(|p| {
            let x = grid.point(p);
            if problem.active(&x) {
                coeffs.phi.eval(&x)
            } else {
                R::zero()
            }
        })
        .collect();
    let mut current = template.with_values(phi0)?.with_std_errors(vec![R::zero(); grid.len()]);
    let mut times = vec![R::zero()];
    let mut slices = vec![current.clone()];
    let mut sweep_changes = Vec::with_capacity(params.n_time);
    let skip_sweeps = coeffs.is_y_free();

    for k in 0..params.n_time {
        let t_new = delta * R::of_usize(k + 1);
        let mut iterate = current.clone();
        let mut changes = Vec::new();
        let passes = if skip_sweeps { 1 } else { 1 + params.picard_sweeps };
        for j in 0..passes {
            let upd = if j == 0 { None } else { Some(&iterate) };
            let est = parabolic_slice(problem, &coeffs, &record, params, k, t_new, delta, &current, upd)?;
            let next = template.with_values(est.values)?.with_std_errors(est.se);
            if j > 0 {
                changes.push(next.sup_abs_diff(&iterate));
            }
            iterate = next;
        }
        sweep_changes.push(changes);
        current = iterate;
        times.push(t_new);
        slices.push(current.clone());
    }
    if record.applied {
        for (t, s) in times.iter().zip(slices.iter_mut()) {
            let e = record.to_original(*t, R::one());
            let se = s.std_errors.clone().unwrap_or_default().iter().map(|&v| v * e).collect();
            *s = s.map(|v| v * e)?.with_std_errors(se);
        }
    }
    Ok(ParabolicSolution { solution: SpaceTimeGrid { times, slices }, sweep_changes, normalization: record })
}

#[allow(clippy::too_many_arguments)]
fn parabolic_slice<R: Real>(
    problem: &ProblemSpec<R>,
    coeffs: &Coefficients<R>,
    record: &NormalizationRecord<R>,
    params: &ParabolicParams<R>,
    k: usize,
    t_new: R,
    delta: R,
    prev: &GridFunction<R>,
    upd: Option<&GridFunction<R>>,
) -> Result<SliceEstimate<R>> {
    let spec = &problem.process;
    let domain = spec.domain.clone();
    let lambda = spec.killing_rate;
    let walker = spec.walker(params.mc.dt);
    let lebesgue = SmoothMeasure::unit_lebesgue();
    let has_f = !coeffs.f.is_zero();
    let has_g = problem.has_g();
    let decay = (-lambda * delta).exp();
    let prev_se = prev.with_values(prev.std_errors.clone().unwrap_or_else(|| vec![R::zero(); prev.len()]))?;
    let cut = |y: R| match params.truncation {
        Some(c) => clamp(y, c),
        None => y,
    };
    // the first slice reads the datum itself rather than its grid interpolant
    let prev_at = |y: &[R]| if k == 0 { coeffs.phi.eval(y) } else { prev.interpolate(y) };
    let read = |s: R, y: &[R]| -> R {
        let old = prev_at(y);
        match upd {
            None => old,
            Some(u) => {
                let a = s / delta;
                (R::one() - a) * u.interpolate(y) + a * old
            }
        }
    };
    let mut values = Vec::with_capacity(prev.len());
    let mut ses = Vec::with_capacity(prev.len());
    for p in 0..prev.len() {
        let x = prev.point(p);
        if !problem.active(&x) {
            values.push(R::zero());
            ses.push(R::zero());
            continue;
        }
        let [value, carried] = accumulate(params.mc.n_paths, || WalkScratch::new(domain.dim()), |s, i| {
            let mut rng = RngStream::keyed(params.mc.seed, &[tag::PARABOLIC, k as u64, p as u64, i as u64]).rng();
            s.x.copy_from_slice(&x);
            let wf = |t: R, y: &[R]| record.f_hat(&coeffs.f, t_new - t, y, cut(read(t, y)));
            let wg = |t: R, y: &[R]| record.g_hat(&coeffs.g, t_new - t, y, cut(read(t, y)));
            let mut fi = AfIntegrator::new(&lebesgue, &domain).with_discount(lambda);
            let mut gi = AfIntegrator::new(&problem.measure, &domain).with_discount(lambda);
            if has_f {
                fi.start(R::zero(), &x, wf);
            }
            if has_g {
                gi.start(R::zero(), &x, wg);
            }
            let mut acc = R::zero();
            let zeta = walker.walk(s, delta, &mut rng, |v| {
                if has_f {
                    acc += fi.step(v, wf);
                }
                if has_g {
                    acc += gi.step(v, wg);
                }
            });
            if zeta.is_finite() {
                [acc, R::zero()]
            } else {
                [acc + decay * prev_at(&s.x), decay * prev_se.interpolate(&s.x)]
            }
        });
        values.push(value.mean);
        ses.push(value.std_error() + carried.mean);
    }
    Ok(SliceEstimate { values, se: ses })
}

#[derive(Clone, Copy, Debug)]
pub struct EllipticParams<R> {
    pub mc: McParams<R>,
    /// Path horizon `n` of the truncated representation.
    pub horizon: R,
    pub tol_floor: R,
    pub se_factor: R,
    pub max_sweeps: usize,
    pub probe: MonotonicityProbe<R>,
}

impl<R: Real> EllipticParams<R> {
    pub fn new(mc: McParams<R>, horizon: R) -> Self {
        Self {
            mc,
            horizon,
            tol_floor: R::of(1e-3),
            se_factor: R::of(3.0),
            max_sweeps: 50,
            probe: MonotonicityProbe::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticSolution<R> {
    /// Last iterate; its standard errors include the Picard contraction factor.
    pub solution: GridFunction<R>,
    /// Sup-grid change of each sweep.
    pub trace: Vec<R>,
    pub sweeps: usize,
    /// Estimated contraction ratio of the iteration.
    pub contraction: R,
    /// Fraction of paths alive at the horizon, maximized over the grid.
    pub max_survivor_fraction: R,
}

/// Picard iteration `v^{j+1}(x) = E_x ∫_0^{ζ∧n} e^{-λt}(f(X, v^j(X)) dt + g(X, v^j(X)) dA)`
/// from `v^0 = 0`, stopping once the sup-grid change is at most
/// `max(tol_floor, se_factor · median SE)`. Sweeps share random streams.
pub fn solve_elliptic<R: Real>(
    problem: &ProblemSpec<R>,
    grid: &GridFunction<R>,
    params: &EllipticParams<R>,
) -> Result<EllipticSolution<R>> {
    problem.check(&params.probe)?;
    params.mc.validate()?;
    let spec = &problem.process;
    if !spec.is_transient() && spec.killing_rate == R::zero() {
        return Err(LabError::Divergence(
            "elliptic problem needs a killed bounded domain or a positive killing rate".into(),
        ));
    }
    if problem.coefficients.alpha_mono > spec.killing_rate {
        return Err(LabError::Monotonicity(format!(
            "elliptic driver needs α_mono <= λ, got {} > {}",
            problem.coefficients.alpha_mono, spec.killing_rate
        )));
    }
    let template = grid.with_values(vec![R::zero(); grid.len()])?.with_extension(problem.extension());
    let mut v = template.clone();
    let mut trace = Vec::new();
    let mut max_surv = R::zero();
    let y_free = problem.coefficients.is_y_free();
    for j in 0..params.max_sweeps {
        let (values, se, surv) = elliptic_sweep(problem, params, &v)?;
        max_surv = max_surv.max(surv);
        let next = template.with_values(values)?.with_std_errors(se.clone());
        let change = next.sup_abs_diff(&v);
        trace.push(change);
        v = next;
        let tol = params.tol_floor.max(params.se_factor * median(&se));
        if y_free || (j > 0 && change <= tol) {
            if y_free {
                // y-independent drivers reach the fixed point in one sweep
                trace.push(R::zero());
            }
            let q = contraction(&trace);
            let se_v: Vec<R> = se.iter().map(|&s| s / (R::one() - q)).collect();
            let sweeps = trace.len();
            return Ok(EllipticSolution {
                solution: v.with_std_errors(se_v),
                trace,
                sweeps,
                contraction: q,
                max_survivor_fraction: max_surv,
            });
        }
    }
    Err(LabError::NonConvergence {
        context: "elliptic Picard iteration".into(),
        iterations: params.max_sweeps,
        last_change: trace.last().map(|c| c.as_f64()).unwrap_or(f64::NAN),
        trace: trace.iter().map(|c| c.as_f64()).collect(),
    })
}

fn contraction<R: Real>(trace: &[R]) -> R {
    let n = trace.len();
    if n < 3 || trace[n - 3] == R::zero() {
        return R::zero();
    }
    (trace[n - 2] / trace[n - 3]).max(R::zero()).min(R::of(0.9))
}

fn elliptic_sweep<R: Real>(
    problem: &ProblemSpec<R>,
    params: &EllipticParams<R>,
    v: &GridFunction<R>,
) -> Result<(Vec<R>, Vec<R>, R)> {
    let spec = &problem.process;
    let domain = &spec.domain;
    let walker = spec.walker(params.mc.dt);
    let lebesgue = SmoothMeasure::unit_lebesgue();
    let coeffs = &problem.coefficients;
    let has_f = !coeffs.f.is_zero();
    let has_g = problem.has_g();
    let mut values = Vec::with_capacity(v.len());
    let mut ses = Vec::with_capacity(v.len());
    let mut max_surv = R::zero();
    for p in 0..v.len() {
        let x = v.point(p);
        if !problem.active(&x) {
            values.push(R::zero());
            ses.push(R::zero());
            continue;
        }
        let [value, surv] = accumulate(params.mc.n_paths, || WalkScratch::new(domain.dim()), |s, i| {
            let mut rng = RngStream::keyed(params.mc.seed, &[tag::ELLIPTIC, p as u64, i as u64]).rng();
            s.x.copy_from_slice(&x);
            let wf = |_: R, y: &[R]| coeffs.f.eval(y, v.interpolate(y));
            let wg = |_: R, y: &[R]| coeffs.g.eval(y, v.interpolate(y));
            let mut fi = AfIntegrator::new(&lebesgue, domain).with_discount(spec.killing_rate);
            let mut gi = AfIntegrator::new(&problem.measure, domain).with_discount(spec.killing_rate);
            if has_f {
                fi.start(R::zero(), &x, wf);
            }
            if has_g {
                gi.start(R::zero(), &x, wg);
            }
            let mut acc = R::zero();
            let zeta = walker.walk(s, params.horizon, &mut rng, |st| {
                if has_f {
                    acc += fi.step(st, wf);
                }
                if has_g {
                    acc += gi.step(st, wg);
                }
            });
            [acc, if zeta.is_finite() { R::zero() } else { R::one() }]
        });
        values.push(value.mean);
        ses.push(value.std_error());
        max_surv = max_surv.max(surv.mean);
    }
    Ok((values, ses, max_surv))
}

/// One grid point of a two-sided comparison with its combined standard error.
#[derive(Clone, Debug, Serialize)]
pub struct BoundPoint<R> {
    pub x: Vec<R>,
    pub lhs: R,
    pub rhs: R,
    /// Combined standard error of `lhs` and `rhs`.
    pub se: R,
    pub rhs_se: R,
}

impl<R: Real> BoundPoint<R> {
    pub fn holds(&self, k: R) -> bool {
        self.lhs <= self.rhs + k * self.se
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck<R> {
    pub points: Vec<BoundPoint<R>>,
}

impl<R: Real> BoundCheck<R> {
    /// `lhs ≤ rhs + k·SE` at every point.
    pub fn holds(&self, k: R) -> bool {
        self.points.iter().all(|p| p.holds(k))
    }

    pub fn sup_lhs(&self) -> R {
        self.points.iter().fold(R::zero(), |m, p| m.max(p.lhs))
    }
}

/// Finite-horizon truncation: the truncated elliptic values are the parabolic
/// solution at times `n` and `m`, and
/// `|u(m,x) - u(n,x)| ≤ E_x[1_{ζ>m}|φ(X_m)| + 1_{ζ>n}|φ(X_n)| + ∫_{n∧ζ}^{m∧ζ} |f(X,0)| dt + ∫ |g(X,0)| dA]`.
/// `solution` must contain slices at (or nearest to) `n` and `m`.
pub fn truncation_gap<R: Real>(
    problem: &ProblemSpec<R>,
    solution: &SpaceTimeGrid<R>,
    n: R,
    m: R,
    mc: McParams<R>,
) -> Result<BoundCheck<R>> {
    mc.validate()?;
    if !(R::zero() <= n && n <= m) {
        return Err(LabError::InvalidParameter("truncation gap needs 0 <= n <= m".into()));
    }
    let un = solution.at_time(n);
    let um = solution.at_time(m);
    let spec = &problem.process;
    let domain = &spec.domain;
    let walker = spec.walker(mc.dt);
    let lebesgue = SmoothMeasure::unit_lebesgue();
    let phi_abs = problem.coefficients.phi.abs();
    let f0 = problem.coefficients.f.abs_at_zero();
    let g0 = problem.coefficients.g.abs_at_zero();
    let has_f = !f0.is_zero();
    let has_g = problem.has_g();
    let lambda = spec.killing_rate;
    let mut points = Vec::with_capacity(un.len());
    for p in 0..un.len() {
        let x = un.point(p);
        let lhs = (um.values[p] - un.values[p]).abs();
        let lhs_se = um.std_error(p) + un.std_error(p);
        if !problem.active(&x) {
            points.push(BoundPoint { x, lhs, rhs: R::zero(), se: lhs_se, rhs_se: R::zero() });
            continue;
        }
        let [rhs] = accumulate(mc.n_paths, || WalkScratch::new(domain.dim()), |s, i| {
            let mut rng = RngStream::keyed(mc.seed, &[tag::TRUNCATION, p as u64, i as u64]).rng();
            s.x.copy_from_slice(&x);
            let wf = |_: R, y: &[R]| f0.eval(y);
            let wg = |_: R, y: &[R]| g0.eval(y);
            let mut fi = AfIntegrator::new(&lebesgue, domain).with_discount(lambda);
            let mut gi = AfIntegrator::new(&problem.measure, domain).with_discount(lambda);
            let mut acc = R::zero();
            if n == m {
                return [R::zero()];
            }
            if walker.walk(s, n, &mut rng, |_| {}).is_finite() {
                return [R::zero()];
            }
            acc += (-lambda * n).exp() * phi_abs.eval(&s.x);
            let start = s.x.clone();
            fi.start(n, &start, wf);
            gi.start(n, &start, wg);
            let mut tail = R::zero();
            let zeta = walker.walk(s, m - n, &mut rng, |v| {
                if has_f {
                    tail += fi.step(v, wf);
                }
                if has_g {
                    tail += gi.step(v, wg);
                }
            });
            // the discount restarted at elapsed time 0 of the second leg
            acc += (-lambda * n).exp() * tail;
            if zeta.is_infinite() {
                acc += (-lambda * m).exp() * phi_abs.eval(&s.x);
            }
            [acc]
        });
        points.push(BoundPoint { x, lhs, rhs: rhs.mean, se: lhs_se + rhs.std_error(), rhs_se: rhs.std_error() });
    }
    Ok(BoundCheck { points })
}

/// A-priori bound on the solved `u` at time `T`:
/// `E_x[∫|f̃(X_t,u)| dt + ∫|g(X_t,u)| dA] ≤ E_x[|φ(X_{T∧ζ})| + 2∫|f(X_t,0)| dt + 3∫|g(X_t,0)| dA]`
/// over `[0, T∧ζ]`, where `u` is read at `T - t` and `f̃ = f - λy` absorbs the
/// killing rate.
pub fn apriori_check<R: Real>(
    problem: &ProblemSpec<R>,
    solution: &SpaceTimeGrid<R>,
    t_final: R,
    mc: McParams<R>,
) -> Result<BoundCheck<R>> {
    mc.validate()?;
    let spec = &problem.process;
    let domain = &spec.domain;
    let walker = spec.walker(mc.dt);
    let lebesgue = SmoothMeasure::unit_lebesgue();
    let c = &problem.coefficients;
    let lambda = spec.killing_rate;
    let has_g = problem.has_g();
    let grid = solution.at_time(t_final);
    let mut points = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let x = grid.point(p);
        if !problem.active(&x) {
            points.push(BoundPoint { x, lhs: R::zero(), rhs: R::zero(), se: R::zero(), rhs_se: R::zero() });
            continue;
        }
        let [lhs, rhs] = accumulate(mc.n_paths, || WalkScratch::new(domain.dim()), |s, i| {
            let mut rng = RngStream::keyed(mc.seed, &[tag::APRIORI, p as u64, i as u64]).rng();
            s.x.copy_from_slice(&x);
            let u = |t: R, y: &[R]| solution.interpolate(t_final - t, y);
            let lf = |t: R, y: &[R]| {
                let v = u(t, y);
                (c.f.eval(y, v) - lambda * v).abs()
            };
            let lg = |t: R, y: &[R]| c.g.eval(y, u(t, y)).abs();
            let rf = |_: R, y: &[R]| R::of(2.0) * c.f.eval(y, R::zero()).abs();
            let rg = |_: R, y: &[R]| R::of(3.0) * c.g.eval(y, R::zero()).abs();
            let mut ints = [
                AfIntegrator::new(&lebesgue, domain),
                AfIntegrator::new(&problem.measure, domain),
                AfIntegrator::new(&lebesgue, domain),
                AfIntegrator::new(&problem.measure, domain),
            ];
            ints[0].start(R::zero(), &x, lf);
            ints[1].start(R::zero(), &x, lg);
            ints[2].start(R::zero(), &x, rf);
            ints[3].start(R::zero(), &x, rg);
            let (mut l, mut r) = (R::zero(), R::zero());
            let zeta = walker.walk(s, t_final, &mut rng, |v| {
                l += ints[0].step(v, lf);
                r += ints[2].step(v, rf);
                if has_g {
                    l += ints[1].step(v, lg);
                    r += ints[3].step(v, rg);
                }
            });
            if zeta.is_infinite() {
                r += c.phi.eval(&s.x).abs();
            }
            [l, r]
        });
        points.push(BoundPoint { x, lhs: lhs.mean, rhs: rhs.mean, se: lhs.std_error() + rhs.std_error(), rhs_se: rhs.std_error() });
    }
    Ok(BoundCheck { points })
}

/// Reads a [`FieldRead`] at every grid point.
pub fn sample_on_grid<R: Real, F: FieldRead<R> + ?Sized>(grid: &GridFunction<R>, f: &F) -> Result<GridFunction<R>> {
    grid.with_values((0..grid.len()).map(|p| f.read(&grid.point(p))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp(5.0, 3.0), 3.0);
        assert_eq!(clamp(-5.0, 3.0), -3.0);
        assert_eq!(clamp(1.0, 3.0), 1.0);
    }

    #[test]
    fn normalization_identity_for_dissipative() {
        let c = Coefficients::new(CoefFn::new("-y", |_x: &[f64], y| -y), CoefFn::zero(), SpatialFn::zero(), -1.0);
        assert!(!normalize_monotone(&c).1.applied);
        let c0 = Coefficients { alpha_mono: 0.0, ..c };
        assert!(!normalize_monotone(&c0).1.applied);
    }

    #[test]
    fn normalized_driver_is_dissipative() {
        let c = Coefficients::new(CoefFn::new("y", |_x: &[f64], y| y), CoefFn::zero(), SpatialFn::zero(), 1.0);
        let (n, rec) = normalize_monotone(&c);
        assert!(rec.applied && n.alpha_mono == 0.0);
        let d = DomainSpec::interval(0.0, 1.0).unwrap();
        assert!(n.check_monotonicity(&d, &MonotonicityProbe::default()).is_ok());
        for &t in &[0.0, 0.5, 2.0] {
            for &(y, y2) in &[(1.0, -1.0), (3.0, 0.5), (-2.0, -4.0)] {
                let lhs = (rec.f_hat(&c.f, t, &[0.5], y) - rec.f_hat(&c.f, t, &[0.5], y2)) * (y - y2);
                assert!(lhs <= 1e-12);
            }
        }
    }

    #[test]
    fn monotonicity_probe_rejects_increasing_g() {
        let d = DomainSpec::interval(0.0, 1.0).unwrap();
        let bad = Coefficients::new(CoefFn::zero(), CoefFn::new("y", |_x: &[f64], y| y), SpatialFn::zero(), 0.0);
        assert!(matches!(
            bad.check_monotonicity(&d, &MonotonicityProbe::default()),
            Err(LabError::Monotonicity(_))
        ));
        let cubic = Coefficients::new(
            CoefFn::new("-y^3+1", |_x: &[f64], y: f64| -y * y * y + 1.0),
            CoefFn::new("1/(1+y+)", |_x: &[f64], y: f64| 1.0 / (1.0 + y.max(0.0))),
            SpatialFn::zero(),
            0.0,
        );
        assert!(cubic.check_monotonicity(&d, &MonotonicityProbe::default()).is_ok());
        let lip = Coefficients::new(CoefFn::new("y", |_x: &[f64], y| y), CoefFn::zero(), SpatialFn::zero(), 0.5);
        assert!(lip.check_monotonicity(&d, &MonotonicityProbe::default()).is_err());
    }

    fn interval_problem(coeffs: Coefficients<f64>) -> ProblemSpec<f64> {
        let d = DomainSpec::interval(0.0, 1.0).unwrap();
        ProblemSpec::new(ProcessSpec::killed_brownian(d).unwrap(), coeffs, SmoothMeasure::unit_lebesgue()).unwrap()
    }

    #[test]
    fn linear_parabolic_matches_heat_mode() {
        let pi = std::f64::consts::PI;
        let prob = interval_problem(Coefficients::linear(SpatialFn::new("sin", move |x: &[f64]| (pi * x[0]).sin())));
        let grid = prob.grid(9).unwrap();
        let params = ParabolicParams::new(McParams::new(4000, 1e-3, 7).unwrap(), 2);
        let sol = solve_parabolic(&prob, 0.1, &grid, &params).unwrap();
        let last = sol.solution.last();
        for p in 0..last.len() {
            let x = last.point(p)[0];
            let exact = (-pi * pi * 0.05).exp() * (pi * x).sin();
            assert!((last.values[p] - exact).abs() <= 4.0 * last.std_error(p) + 2e-2, "x={x} {} {exact}", last.values[p]);
        }
    }

    #[test]
    fn elliptic_constant_source() {
        let prob = interval_problem(Coefficients::new(
            CoefFn::constant(1.0),
            CoefFn::zero(),
            SpatialFn::zero(),
            0.0,
        ));
        let grid = prob.grid(5).unwrap();
        let params = EllipticParams::new(McParams::new(4000, 1e-3, 3).unwrap(), 10.0);
        let sol = solve_elliptic(&prob, &grid, &params).unwrap();
        assert_eq!(sol.sweeps, 2);
        let v = &sol.solution;
        for p in 0..v.len() {
            let x = v.point(p)[0];
            assert!((v.values[p] - x * (1.0 - x)).abs() <= 4.0 * v.std_error(p) + 5e-3, "x={x}");
        }
    }

    #[test]
    fn elliptic_picard_converges_for_dissipative_driver() {
        let prob = interval_problem(Coefficients::new(
            CoefFn::new("1-y^3", |_x: &[f64], y: f64| 1.0 - y * y * y),
            CoefFn::zero(),
            SpatialFn::zero(),
            0.0,
        ));
        let grid = prob.grid(5).unwrap();
        let params = EllipticParams::new(McParams::new(1000, 2e-3, 3).unwrap(), 10.0);
        let sol = solve_elliptic(&prob, &grid, &params).unwrap();
        assert!(sol.sweeps <= 10);
        assert!(sol.solution.values[2] > 0.2 && sol.solution.values[2] < 0.25);
    }

    #[test]
    fn boundary_nodes_are_zero_and_bad_horizon_rejected() {
        let prob = interval_problem(Coefficients::linear(SpatialFn::constant(1.0)));
        let grid = prob.grid(3).unwrap();
        let params = ParabolicParams::new(McParams::new(100, 1e-2, 1).unwrap(), 1);
        let sol = solve_parabolic(&prob, 0.1, &grid, &params).unwrap();
        assert_eq!(sol.solution.slices[0].values[0], 0.0);
        assert_eq!(sol.solution.last().values[2], 0.0);
        assert!(solve_parabolic(&prob, 0.0, &grid, &params).is_err());
    }
}
