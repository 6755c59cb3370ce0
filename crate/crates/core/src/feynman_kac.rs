//! Linear Monte Carlo estimators: semigroups, potentials, resolvent identities,
//! and closed-form interval oracles for killed Brownian motion.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::estimate::{accumulate, MCEstimate, McParams};
use crate::func::FieldRead;
use crate::functional::{AfIntegrator, SmoothMeasure};
use crate::grid::GridFunction;
use crate::process::{ProcessSpec, WalkScratch};
use crate::real::Real;
use crate::rng::RngStream;

/// Stream-space tags keeping the estimators' random numbers disjoint.
pub(crate) mod tag {
    pub const SEMIGROUP: u64 = 1;
    pub const POTENTIAL: u64 = 2;
    pub const RESOLVENT_OUTER: u64 = 3;
    pub const RESOLVENT_INNER: u64 = 4;
    pub const PARABOLIC: u64 = 5;
    pub const ELLIPTIC: u64 = 6;
    pub const APRIORI: u64 = 7;
    pub const TRUNCATION: u64 = 8;
}

/// `E_x[φ(X_t); t < ζ]` without the killing weight.
fn semigroup_inner<R: Real, F: FieldRead<R> + ?Sized>(
    spec: &ProcessSpec<R>,
    phi: &F,
    t: R,
    x: &[R],
    mc: McParams<R>,
    stream: impl Fn(usize) -> RngStream + Sync,
) -> Result<MCEstimate<R>> {
    mc.validate()?;
    if t < R::zero() {
        return Err(LabError::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    let inside = spec.check_start(x)?;
    let walker = spec.walker(mc.dt);
    let [acc] = accumulate(mc.n_paths, || WalkScratch::new(spec.dim()), |s, i| {
        if !inside {
            return [R::zero()];
        }
        if t == R::zero() {
            return [phi.read(x)];
        }
        let mut rng = stream(i).rng();
        s.x.copy_from_slice(x);
        let zeta = walker.walk(s, t, &mut rng, |_| {});
        if zeta.is_finite() {
            [R::zero()]
        } else {
            [phi.read(&s.x)]
        }
    });
    MCEstimate::from_welford(&acc, mc.meta(t))
}

/// `P_t φ(x) = e^{-λt} E_x[φ(X_t); t < ζ]` with `λ` the spec's killing rate.
/// The weight multiplies the unweighted estimate, so runs at equal seeds differ
/// by exactly that factor.
pub fn semigroup_apply<R: Real, F: FieldRead<R> + ?Sized>(
    spec: &ProcessSpec<R>,
    phi: &F,
    t: R,
    x: &[R],
    mc: McParams<R>,
) -> Result<MCEstimate<R>> {
    let seed = mc.seed;
    let est = semigroup_inner(spec, phi, t, x, mc, |i| RngStream::keyed(seed, &[tag::SEMIGROUP, i as u64]))?;
    Ok(est.scaled((-spec.killing_rate * t).exp()))
}

/// [`semigroup_apply`] at every point of `grid`; streams are keyed by point.
pub fn semigroup_grid<R: Real, F: FieldRead<R> + ?Sized>(
    spec: &ProcessSpec<R>,
    phi: &F,
    t: R,
    grid: &GridFunction<R>,
    mc: McParams<R>,
) -> Result<GridFunction<R>> {
    let weight = (-spec.killing_rate * t).exp();
    let mut values = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let x = grid.point(p);
        if !spec.domain.closure_contains(&x) {
            values.push(R::zero());
            se.push(R::zero());
            continue;
        }
        let seed = mc.seed;
        let e = semigroup_inner(spec, phi, t, &x, mc, |i| {
            RngStream::keyed(seed, &[tag::SEMIGROUP, p as u64, i as u64])
        })?
        .scaled(weight);
        values.push(e.mean);
        se.push(e.std_error);
    }
    Ok(grid.with_values(values)?.with_std_errors(se))
}

fn divergence_guard<R: Real>(spec: &ProcessSpec<R>, measure: &SmoothMeasure<R>, alpha: R) -> Result<()> {
    if alpha < R::zero() {
        return Err(LabError::InvalidParameter(format!("rate must be >= 0, got {alpha}")));
    }
    if alpha + spec.killing_rate == R::zero() && !spec.is_transient() && !measure.is_zero() {
        return Err(LabError::Divergence(
            "zero-rate potential of a recurrent process is infinite".into(),
        ));
    }
    if measure.is_surface() && !spec.is_reflected() {
        return Err(LabError::Unsupported("surface measure needs the reflected process".into()));
    }
    Ok(())
}

fn potential_inner<R: Real, F: FieldRead<R> + ?Sized>(
    spec: &ProcessSpec<R>,
    measure: &SmoothMeasure<R>,
    weight: &F,
    alpha: R,
    x: &[R],
    mc: McParams<R>,
    horizon: R,
    stream: impl Fn(usize) -> RngStream + Sync,
) -> Result<MCEstimate<R>> {
    mc.validate()?;
    divergence_guard(spec, measure, alpha)?;
    let inside = spec.check_start(x)?;
    let rate = alpha + spec.killing_rate;
    let walker = spec.walker(mc.dt);
    let w = |_: R, y: &[R]| weight.read(y);
    let [acc, survived] = accumulate(mc.n_paths, || WalkScratch::new(spec.dim()), |s, i| {
        if !inside || measure.is_zero() {
            return [R::zero(), R::zero()];
        }
        let mut rng = stream(i).rng();
        s.x.copy_from_slice(x);
        let mut integ = AfIntegrator::new(measure, &spec.domain).with_discount(rate);
        integ.start(R::zero(), x, w);
        let mut a = R::zero();
        let zeta = walker.walk(s, horizon, &mut rng, |v| a += integ.step(v, w));
        [a, if zeta.is_finite() { R::zero() } else { R::one() }]
    });
    let mut est = MCEstimate::from_welford(&acc, mc.meta(horizon))?;
    if rate == R::zero() && survived.mean > R::of(0.01) {
        est = est.with_warning(format!(
            "survivor fraction {:.4} > 1% at the horizon: truncated potential biased low",
            survived.mean
        ));
    }
    Ok(est)
}

/// `E_x ∫_0^{ζ ∧ horizon} e^{-(α+λ)t} w(X_t) dA^μ_t`.
pub fn potential<R: Real, F: FieldRead<R> + ?Sized>(
    spec: &ProcessSpec<R>,
    measure: &SmoothMeasure<R>,
    weight: &F,
    alpha: R,
    x: &[R],
    mc: McParams<R>,
    horizon: R,
) -> Result<MCEstimate<R>> {
    let seed = mc.seed;
    potential_inner(spec, measure, weight, alpha, x, mc, horizon, |i| {
        RngStream::keyed(seed, &[tag::POTENTIAL, i as u64])
    })
}

/// [`potential`] at every grid point, points outside the closed domain set to 0.
#[allow(clippy::too_many_arguments)]
pub fn potential_grid<R: Real, F: FieldRead<R> + ?Sized>(
    spec: &ProcessSpec<R>,
    measure: &SmoothMeasure<R>,
    weight: &F,
    alpha: R,
    grid: &GridFunction<R>,
    mc: McParams<R>,
    horizon: R,
) -> Result<GridFunction<R>> {
    let mut values = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let x = grid.point(p);
        if !spec.domain.closure_contains(&x) {
            values.push(R::zero());
            se.push(R::zero());
            continue;
        }
        let seed = mc.seed;
        let e = potential_inner(spec, measure, weight, alpha, &x, mc, horizon, |i| {
            RngStream::keyed(seed, &[tag::POTENTIAL, p as u64, i as u64])
        })?;
        values.push(e.mean);
        se.push(e.std_error);
    }
    Ok(grid.with_values(values)?.with_std_errors(se))
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualPoint<R> {
    pub x: Vec<R>,
    pub residual: R,
    /// Sum of the three estimators' standard errors (with the `|1-λ|` factor).
    pub combined_se: R,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventResidual<R> {
    pub points: Vec<ResidualPoint<R>>,
    pub max_residual: R,
    pub inner_paths: usize,
    pub outer_paths: usize,
}

impl<R: Real> ResolventResidual<R> {
    /// Every point satisfies `residual ≤ k · combined SE`.
    pub fn within(&self, k: R) -> bool {
        self.points.iter().all(|p| p.residual <= k * p.combined_se)
    }
}

/// Checks `R_λν = R_1ν + (1-λ) R_λ(R_1ν)` at each grid point.
///
/// `R_λ(R_1ν)(x)` is estimated as `λ^{-1} E_x[R_1ν(X_τ); τ < ζ]` with
/// `τ ~ Exp(λ)` on each outer path, and `R_1ν(X_τ)` from `inner_paths`
/// fresh paths started at `X_τ`. Inner averages enter linearly, so the nested
/// estimator is unbiased. All resolvents include the spec's killing rate.
pub fn resolvent_equation_residual<R: Real>(
    spec: &ProcessSpec<R>,
    measure: &SmoothMeasure<R>,
    lambda: R,
    x_grid: &[Vec<R>],
    mc: McParams<R>,
    inner_paths: usize,
) -> Result<ResolventResidual<R>> {
    mc.validate()?;
    if !(lambda > R::zero()) {
        return Err(LabError::InvalidParameter(format!("λ must be > 0, got {lambda}")));
    }
    if inner_paths == 0 {
        return Err(LabError::InvalidParameter("inner path count must be positive".into()));
    }
    divergence_guard(spec, measure, R::one().min(lambda))?;
    let one = R::one();
    let unit = R::one();
    let horizon_for = |rate: R| R::of(40.0) / (rate + spec.killing_rate);
    let walker = spec.walker(mc.dt);
    let k = spec.killing_rate;
    let mut points = Vec::with_capacity(x_grid.len());
    for (p, x) in x_grid.iter().enumerate() {
        let pk = p as u64;
        let r_lam = potential_inner(spec, measure, &unit, lambda, x, mc, horizon_for(lambda), |i| {
            RngStream::keyed(mc.seed, &[tag::RESOLVENT_OUTER, pk, 0, i as u64])
        })?;
        let r_one = potential_inner(spec, measure, &unit, one, x, mc, horizon_for(one), |i| {
            RngStream::keyed(mc.seed, &[tag::RESOLVENT_OUTER, pk, 1, i as u64])
        })?;
        let inside = spec.check_start(x)?;
        let inner_h = horizon_for(one);
        let [nested] = accumulate(mc.n_paths, || (WalkScratch::new(spec.dim()), WalkScratch::new(spec.dim())), |(s, si), i| {
            if !inside || measure.is_zero() {
                return [R::zero()];
            }
            let mut rng = RngStream::keyed(mc.seed, &[tag::RESOLVENT_OUTER, pk, 2, i as u64]).rng();
            let tau = R::exp1(&mut rng) / lambda;
            s.x.copy_from_slice(x);
            if walker.walk(s, tau, &mut rng, |_| {}).is_finite() {
                return [R::zero()];
            }
            let start = s.x.clone();
            let mut total = R::zero();
            for j in 0..inner_paths {
                let mut irng = RngStream::keyed(mc.seed, &[tag::RESOLVENT_INNER, pk, i as u64, j as u64]).rng();
                si.x.copy_from_slice(&start);
                let w = |_: R, _: &[R]| one;
                let mut integ = AfIntegrator::new(measure, &spec.domain).with_discount(one + k);
                integ.start(R::zero(), &start, w);
                let mut a = R::zero();
                walker.walk(si, inner_h, &mut irng, |v| a += integ.step(v, w));
                total += a;
            }
            // τ ~ Exp(λ) reproduces the e^{-λt} weight; e^{-κτ} adds the killing rate.
            [(-k * tau).exp() * total / (R::of_usize(inner_paths) * lambda)]
        });
        let nested = MCEstimate::from_welford(&nested, mc.meta(inner_h))?;
        let c = one - lambda;
        let residual = (r_lam.mean - r_one.mean - c * nested.mean).abs();
        let combined_se = r_lam.std_error + r_one.std_error + c.abs() * nested.std_error;
        points.push(ResidualPoint { x: x.clone(), residual, combined_se });
    }
    let max_residual = points.iter().fold(R::zero(), |m, p| m.max(p.residual));
    Ok(ResolventResidual { points, max_residual, inner_paths, outer_paths: mc.n_paths })
}

/// Quantities available in closed form for killed Brownian motion on `(a, b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralKind {
    /// `P_t φ`.
    Semigroup { t: f64 },
    /// `R_α φ = ∫_0^∞ e^{-αt} P_t φ dt`.
    Potential { alpha: f64 },
    /// `P_t R_α φ`.
    SemigroupOfPotential { t: f64, alpha: f64 },
    /// `∫_from^to P_t φ dt`.
    TimeIntegral { from: f64, to: f64 },
}

const SPECTRAL_TOL: f64 = 1e-10;
const MAX_MODES: usize = 200_000;

/// Closed-form oracle for killed Brownian motion (generator `½Δ`) on an
/// interval, with an extra killing rate `kill`.
///
/// Time-dependent kinds sum the Dirichlet eigen-expansion until the tail bound
/// drops below `1e-10`; resolvents integrate the explicit Green kernel.
pub fn spectral_oracle_interval(
    interval: (f64, f64),
    kind: SpectralKind,
    phi: &dyn Fn(f64) -> f64,
    x: f64,
    kill: f64,
) -> Result<f64> {
    let (a, b) = interval;
    if !(a < b) {
        return Err(LabError::Domain("oracle needs a < b".into()));
    }
    if x <= a || x >= b {
        return Ok(0.0);
    }
    match kind {
        SpectralKind::Semigroup { t } if t == 0.0 => Ok(phi(x)),
        SpectralKind::Semigroup { t } => eigen_sum(a, b, phi, x, |mu| (-(mu + kill) * t).exp(), t),
        SpectralKind::Potential { alpha } => green_integral(a, b, alpha + kill, phi, x),
        SpectralKind::SemigroupOfPotential { t, alpha } if t == 0.0 => green_integral(a, b, alpha + kill, phi, x),
        SpectralKind::SemigroupOfPotential { t, alpha } => {
            eigen_sum(a, b, phi, x, |mu| (-(mu + kill) * t).exp() / (mu + kill + alpha), t)
        }
        SpectralKind::TimeIntegral { from, to } => {
            if !(0.0 <= from && from <= to) {
                return Err(LabError::InvalidParameter("time integral needs 0 <= from <= to".into()));
            }
            let head = if from == 0.0 {
                green_integral(a, b, kill, phi, x)?
            } else {
                eigen_sum(a, b, phi, x, |mu| (-(mu + kill) * from).exp() / (mu + kill), from)?
            };
            let tail = if to.is_infinite() {
                0.0
            } else {
                eigen_sum(a, b, phi, x, |mu| (-(mu + kill) * to).exp() / (mu + kill), to)?
            };
            Ok(head - tail)
        }
    }
}

/// Spectral sum with a mode weight `w(μ_n)` decaying at least like `e^{-μ_n t}`.
fn eigen_sum(a: f64, b: f64, phi: &dyn Fn(f64) -> f64, x: f64, w: impl Fn(f64) -> f64, t: f64) -> Result<f64> {
    let l = b - a;
    let pi = std::f64::consts::PI;
    let sup = (0..=256).map(|i| phi(a + l * i as f64 / 256.0).abs()).fold(0.0, f64::max);
    let coef_bound = 2.0 * sup.max(1e-300);
    let mut sum = 0.0;
    for n in 1..=MAX_MODES {
        let k = n as f64 * pi / l;
        let mu = 0.5 * k * k;
        let wn = w(mu);
        // Σ_{m>n} |w(μ_m)| ≤ |w(μ_{n+1})| / (1 - e^{-(μ_{n+2}-μ_{n+1}) t}) since w decays like e^{-μt}
        let next = 0.5 * ((n + 1) as f64 * pi / l).powi(2);
        let gap = 0.5 * (2 * n + 3) as f64 * (pi / l).powi(2);
        let tail = coef_bound * w(next).abs() / (1.0 - (-gap * t).exp());
        let c = sine_coefficient(a, l, n, phi)?;
        sum += c * wn * (k * (x - a)).sin();
        if tail.is_finite() && tail < SPECTRAL_TOL {
            return Ok(sum);
        }
    }
    Err(LabError::Quadrature(format!("spectral sum not converged in {MAX_MODES} modes at t = {t}")))
}

/// `(2/L) ∫_a^b φ(y) sin(nπ(y-a)/L) dy` by composite Simpson resolving the mode.
fn sine_coefficient(a: f64, l: f64, n: usize, phi: &dyn Fn(f64) -> f64) -> Result<f64> {
    let m = (64 * n).max(2048);
    let h = l / m as f64;
    let k = n as f64 * std::f64::consts::PI / l;
    let mut s = 0.0;
    for i in 0..=m {
        let y = a + h * i as f64;
        let wgt = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        s += wgt * phi(y) * (k * (y - a)).sin();
    }
    Ok(2.0 / l * s * h / 3.0)
}

/// Green kernel of `-½Δ + r` on `(a, b)` with Dirichlet conditions.
pub fn green_kernel(a: f64, b: f64, r: f64, x: f64, y: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    if r == 0.0 {
        2.0 * (lo - a) * (b - hi) / (b - a)
    } else {
        let k = (2.0 * r).sqrt();
        2.0 * (k * (lo - a)).sinh() * (k * (b - hi)).sinh() / (k * (k * (b - a)).sinh())
    }
}

fn green_integral(a: f64, b: f64, r: f64, phi: &dyn Fn(f64) -> f64, x: f64) -> Result<f64> {
    let f = |y: f64| green_kernel(a, b, r, x, y) * phi(y);
    Ok(adaptive_simpson(&f, a, x, 1e-12)? + adaptive_simpson(&f, x, b, 1e-12)?)
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Option<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol || (depth > 40 && delta.abs() <= 1e-6) {
            return Some(left + right + delta / 15.0);
        }
        if depth > 48 {
            return None;
        }
        Some(rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth + 1)? + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth + 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 0)
        .ok_or_else(|| LabError::Quadrature(format!("adaptive Simpson on [{a}, {b}]")))
}
