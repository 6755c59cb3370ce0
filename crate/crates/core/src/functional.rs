//! Smooth measures and their additive functionals `A^μ` along simulated paths.
//!
//! All measures share one quadrature family: the trapezoidal rule in time for
//! densities (left-point on the step that ends at the lifetime) and the
//! Stieltjes sum `Σ w(X) dl` over boundary contacts for surface measures.

use serde::Serialize;

use crate::domain::DomainSpec;
use crate::error::{LabError, Result};
use crate::estimate::{accumulate_dyn, MCEstimate, McParams};
use crate::func::{FieldRead, SpatialFn};
use crate::process::{PathSample, ProcessSpec, StepView, WalkScratch};
use crate::real::Real;
use crate::rng::RngStream;

/// Probe points per axis used by the nonnegativity check.
const PROBES_PER_AXIS: usize = 33;

#[derive(Clone, Debug)]
pub enum MeasureKind<R> {
    /// `β(x) dx` with `β ≥ 0`.
    LebesgueDensity { beta: SpatialFn<R> },
    /// `w(x) σ(dx)` on the boundary; only reflected paths carry the matching local time.
    SurfaceMeasure { weight: SpatialFn<R> },
    /// `mass · κ_ε(x - x0) dx` with the product hat kernel of half-width `ε`.
    MollifiedPoint { center: Vec<R>, mass: R, bandwidth: R },
}

#[derive(Clone, Debug)]
pub struct SmoothMeasure<R> {
    pub kind: MeasureKind<R>,
    pub total_mass_hint: Option<R>,
}

impl<R: Real> SmoothMeasure<R> {
    pub fn lebesgue(beta: SpatialFn<R>) -> Self {
        Self { kind: MeasureKind::LebesgueDensity { beta }, total_mass_hint: None }
    }

    /// Lebesgue measure itself, `β ≡ 1`.
    pub fn unit_lebesgue() -> Self {
        Self::lebesgue(SpatialFn::constant(R::one()))
    }

    pub fn zero() -> Self {
        Self::lebesgue(SpatialFn::zero())
    }

    pub fn surface(weight: SpatialFn<R>) -> Self {
        Self { kind: MeasureKind::SurfaceMeasure { weight }, total_mass_hint: None }
    }

    pub fn mollified_point(center: Vec<R>, mass: R, bandwidth: R) -> Result<Self> {
        if !(mass > R::zero()) || !(bandwidth > R::zero()) {
            return Err(LabError::InvalidParameter(format!(
                "mollified point needs mass > 0 and bandwidth > 0, got {mass}, {bandwidth}"
            )));
        }
        Ok(Self { kind: MeasureKind::MollifiedPoint { center, mass, bandwidth }, total_mass_hint: None })
    }

    pub fn with_mass_hint(mut self, mass: R) -> Self {
        self.total_mass_hint = Some(mass);
        self
    }

    pub fn is_surface(&self) -> bool {
        matches!(self.kind, MeasureKind::SurfaceMeasure { .. })
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            MeasureKind::LebesgueDensity { beta } => beta.is_zero(),
            MeasureKind::SurfaceMeasure { weight } => weight.is_zero(),
            MeasureKind::MollifiedPoint { .. } => false,
        }
    }

    /// Density with respect to Lebesgue measure; zero for surface measures.
    #[inline]
    pub fn density(&self, x: &[R]) -> R {
        match &self.kind {
            MeasureKind::LebesgueDensity { beta } => beta.eval(x),
            MeasureKind::SurfaceMeasure { .. } => R::zero(),
            MeasureKind::MollifiedPoint { center, mass, bandwidth } => {
                let mut k = *mass;
                for (&xi, &ci) in x.iter().zip(center) {
                    let u = (xi - ci).abs() / *bandwidth;
                    if u >= R::one() {
                        return R::zero();
                    }
                    k *= (R::one() - u) / *bandwidth;
                }
                k
            }
        }
    }

    #[inline]
    pub fn surface_weight(&self, x: &[R]) -> R {
        match &self.kind {
            MeasureKind::SurfaceMeasure { weight } => weight.eval(x),
            _ => R::zero(),
        }
    }

    /// Checks nonnegativity on a probe grid and the support condition.
    pub fn validate(&self, domain: &DomainSpec<R>) -> Result<()> {
        match &self.kind {
            MeasureKind::MollifiedPoint { center, bandwidth, .. } => {
                if center.len() != domain.dim() {
                    return Err(LabError::Domain("mollifier center has the wrong dimension".into()));
                }
                if !domain.contains(center) {
                    return Err(LabError::Domain(format!("mollifier center {center:?} outside D")));
                }
                let reach = *bandwidth * R::of_usize(center.len()).sqrt();
                match domain.boundary_distance(center) {
                    Some(d) if d <= reach => Err(LabError::Domain(format!(
                        "mollifier support of half-width {bandwidth} leaves D"
                    ))),
                    _ => Ok(()),
                }
            }
            MeasureKind::LebesgueDensity { beta } => check_nonnegative(domain, |x| beta.eval(x), false),
            MeasureKind::SurfaceMeasure { weight } => {
                if !domain.is_rectangular() {
                    return Err(LabError::Unsupported(
                        "surface measures need an interval or box domain".into(),
                    ));
                }
                check_nonnegative(domain, |x| weight.eval(x), true)
            }
        }
    }

    /// `μ(D)` by quadrature, or the hint when one is set.
    pub fn total_mass(&self, domain: &DomainSpec<R>) -> Result<R> {
        if let Some(m) = self.total_mass_hint {
            return Ok(m);
        }
        match &self.kind {
            MeasureKind::MollifiedPoint { mass, .. } => Ok(*mass),
            MeasureKind::LebesgueDensity { beta } => {
                if let SpatialFn::Const(c) = beta {
                    return domain
                        .volume()
                        .map(|v| *c * v)
                        .ok_or_else(|| LabError::Unsupported("mass of an unbounded domain".into()));
                }
                let (lo, hi) = domain
                    .bounding_box()
                    .ok_or_else(|| LabError::Unsupported("mass of an unbounded domain".into()))?;
                let n = cells_per_axis(lo.len());
                let mut cell = R::one();
                for i in 0..lo.len() {
                    cell *= (hi[i] - lo[i]) / R::of_usize(n);
                }
                let mut sum = R::zero();
                for_each_cell_midpoint(&lo, &hi, n, |x| {
                    if domain.contains(x) {
                        sum += beta.eval(x);
                    }
                });
                Ok(sum * cell)
            }
            MeasureKind::SurfaceMeasure { weight } => {
                let (lo, hi) = domain
                    .bounding_box()
                    .filter(|_| domain.is_rectangular())
                    .ok_or_else(|| LabError::Unsupported("surface mass needs an interval or box".into()))?;
                let d = lo.len();
                if d == 1 {
                    return Ok(weight.eval(&lo) + weight.eval(&hi));
                }
                let n = cells_per_axis(d - 1);
                let mut total = R::zero();
                for axis in 0..d {
                    let flo: Vec<R> = (0..d).filter(|&i| i != axis).map(|i| lo[i]).collect();
                    let fhi: Vec<R> = (0..d).filter(|&i| i != axis).map(|i| hi[i]).collect();
                    let mut area = R::one();
                    for i in 0..d - 1 {
                        area *= (fhi[i] - flo[i]) / R::of_usize(n);
                    }
                    let mut p = vec![R::zero(); d];
                    for face in [lo[axis], hi[axis]] {
                        let mut sum = R::zero();
                        for_each_cell_midpoint(&flo, &fhi, n, |y| {
                            let mut k = 0;
                            for (i, pi) in p.iter_mut().enumerate() {
                                if i == axis {
                                    *pi = face;
                                } else {
                                    *pi = y[k];
                                    k += 1;
                                }
                            }
                            sum += weight.eval(&p);
                        });
                        total += sum * area;
                    }
                }
                Ok(total)
            }
        }
    }
}

fn cells_per_axis(d: usize) -> usize {
    if d == 0 {
        return 1;
    }
    ((1u64 << 20) as f64).powf(1.0 / d as f64).floor().max(8.0) as usize
}

fn for_each_cell_midpoint<R: Real>(lo: &[R], hi: &[R], n: usize, mut f: impl FnMut(&[R])) {
    let d = lo.len();
    let mut idx = vec![0usize; d];
    let mut x = vec![R::zero(); d];
    loop {
        for i in 0..d {
            x[i] = lo[i] + (hi[i] - lo[i]) * (R::of_usize(idx[i]) + R::of(0.5)) / R::of_usize(n);
        }
        f(&x);
        let mut i = 0;
        loop {
            if i == d {
                return;
            }
            idx[i] += 1;
            if idx[i] < n {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

fn check_nonnegative<R: Real>(domain: &DomainSpec<R>, f: impl Fn(&[R]) -> R, closed: bool) -> Result<()> {
    let Some((lo, hi)) = domain.bounding_box() else {
        return Ok(());
    };
    let d = lo.len();
    let n = PROBES_PER_AXIS.min(cells_per_axis(d).max(3));
    let mut idx = vec![0usize; d];
    let mut x = vec![R::zero(); d];
    loop {
        for i in 0..d {
            x[i] = lo[i] + (hi[i] - lo[i]) * R::of_usize(idx[i]) / R::of_usize(n - 1);
        }
        let inside = if closed { domain.closure_contains(&x) } else { domain.contains(&x) };
        if inside {
            let v = f(&x);
            if !(v >= R::zero()) {
                return Err(LabError::InvalidParameter(format!(
                    "measure density {v} < 0 at probe {x:?}"
                )));
            }
        }
        let mut i = 0;
        loop {
            if i == d {
                return Ok(());
            }
            idx[i] += 1;
            if idx[i] < n {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Integrates `e^{-rt} w(t, X_t) dA^μ_t` one walker step at a time.
///
/// The discount `e^{-rt}` is integrated exactly over each step and the
/// trapezoid applies to the spatial part, so `∫ e^{-rt} dt` is exact for `β ≡ 1`.
pub struct AfIntegrator<'a, R> {
    measure: &'a SmoothMeasure<R>,
    domain: &'a DomainSpec<R>,
    discount: R,
    prev: R,
    point: Vec<R>,
}

impl<'a, R: Real> AfIntegrator<'a, R> {
    pub fn new(measure: &'a SmoothMeasure<R>, domain: &'a DomainSpec<R>) -> Self {
        Self { measure, domain, discount: R::zero(), prev: R::zero(), point: Vec::with_capacity(domain.dim()) }
    }

    pub fn with_discount(mut self, rate: R) -> Self {
        self.discount = rate;
        self
    }

    /// Resets the integrator at the path start `(t0, x0)`.
    #[inline]
    pub fn start(&mut self, t0: R, x0: &[R], mut w: impl FnMut(R, &[R]) -> R) {
        let beta = self.measure.density(x0);
        self.prev = if beta == R::zero() { R::zero() } else { beta * w(t0, x0) };
    }

    /// `∫_{t-h}^{t} e^{-rs} ds`.
    #[inline]
    fn time_weight(&self, t: R, h: R) -> R {
        if self.discount == R::zero() {
            h
        } else {
            let r = self.discount;
            (-r * (t - h)).exp() * -(-r * h).exp_m1() / r
        }
    }

    /// Increment of `∫ e^{-rt} w dA` over the step described by `view`.
    #[inline]
    pub fn step(&mut self, view: &StepView<'_, R>, mut w: impl FnMut(R, &[R]) -> R) -> R {
        if self.measure.is_surface() {
            let mut inc = R::zero();
            for c in view.contacts {
                c.point_into(self.domain, view.state, &mut self.point);
                let wt = self.measure.surface_weight(&self.point);
                if wt != R::zero() {
                    inc += wt * w(view.t, &self.point) * c.amount;
                }
            }
            if self.discount != R::zero() && inc != R::zero() {
                inc *= (-self.discount * view.t).exp();
            }
            return inc;
        }
        if !view.alive {
            if self.prev == R::zero() {
                return R::zero();
            }
            return self.prev * self.time_weight(view.t, view.h);
        }
        let beta = self.measure.density(view.state);
        let cur = if beta == R::zero() { R::zero() } else { beta * w(view.t, view.state) };
        let sum = self.prev + cur;
        self.prev = cur;
        if sum == R::zero() {
            return R::zero();
        }
        sum * R::of(0.5) * self.time_weight(view.t, view.h)
    }
}

/// Nondecreasing step function `t ↦ A_t` along one path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdditiveFunctional<R> {
    pub start_time: R,
    /// Elapsed times, starting at 0.
    pub times: Vec<R>,
    pub values: Vec<R>,
}

impl<R: Real> AdditiveFunctional<R> {
    /// `A_t` at elapsed time `t` (value at the last knot `≤ t`).
    pub fn at(&self, t: R) -> R {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            R::zero()
        } else {
            self.values[k - 1]
        }
    }

    pub fn at_absolute(&self, t: R) -> R {
        self.at(t - self.start_time)
    }

    pub fn total(&self) -> R {
        self.values.last().copied().unwrap_or_else(R::zero)
    }
}

fn replay<R: Real>(
    path: &PathSample<R>,
    measure: &SmoothMeasure<R>,
    domain: &DomainSpec<R>,
    mut w: impl FnMut(R, &[R]) -> R,
    mut record: impl FnMut(R, R),
) -> Result<()> {
    if path.dim != domain.dim() {
        return Err(LabError::Domain("path and measure live in different dimensions".into()));
    }
    if measure.is_surface() && path.local_time.is_none() {
        return Err(LabError::Unsupported(
            "surface measure along a path without boundary local time".into(),
        ));
    }
    let mut integ = AfIntegrator::new(measure, domain);
    integ.start(R::zero(), path.state(0), &mut w);
    let mut a = R::zero();
    record(R::zero(), a);
    let mut c = 0;
    for k in 1..path.len() {
        let start = c;
        while c < path.contacts.len() && path.contacts[c].0 == k {
            c += 1;
        }
        let contacts: Vec<_> = path.contacts[start..c].iter().map(|(_, ct)| *ct).collect();
        let view = StepView {
            t: path.times[k],
            h: path.times[k] - path.times[k - 1],
            state: path.state(k),
            alive: true,
            contacts: &contacts,
        };
        a += integ.step(&view, &mut w);
        record(path.times[k], a);
    }
    if path.lifetime.is_finite() && path.lifetime > R::zero() {
        let last = path.len() - 1;
        let view = StepView {
            t: path.lifetime,
            h: path.lifetime - path.times[last],
            state: path.state(last),
            alive: false,
            contacts: &[],
        };
        a += integ.step(&view, &mut w);
        record(path.lifetime, a);
    }
    Ok(())
}

/// `A^μ` along a recorded path; constant after the lifetime.
pub fn evaluate_af<R: Real>(
    path: &PathSample<R>,
    measure: &SmoothMeasure<R>,
    domain: &DomainSpec<R>,
) -> Result<AdditiveFunctional<R>> {
    let mut times = Vec::with_capacity(path.len() + 1);
    let mut values = Vec::with_capacity(path.len() + 1);
    replay(path, measure, domain, |_, _| R::one(), |t, a| {
        times.push(t);
        values.push(a);
    })?;
    Ok(AdditiveFunctional { start_time: path.start_time, times, values })
}

/// `∫_0^{ζ ∧ horizon} g(X_s, field(X_s)) dA^μ_s` along a recorded path.
pub fn weighted_af_integral<R: Real, F: FieldRead<R> + ?Sized>(
    path: &PathSample<R>,
    measure: &SmoothMeasure<R>,
    domain: &DomainSpec<R>,
    integrand: impl Fn(&[R], R) -> R,
    field: &F,
) -> Result<R> {
    let mut total = R::zero();
    replay(path, measure, domain, |_, x| integrand(x, field.read(x)), |_, a| total = a)?;
    Ok(total)
}

#[derive(Clone, Debug, Serialize)]
pub struct RevuzRow<R> {
    pub alpha: R,
    /// `α E_m ∫ e^{-αt} dA_t`.
    pub estimate: MCEstimate<R>,
    /// `μ(D)`.
    pub total_mass: R,
}

/// Revuz-limit table: `α E_m ∫_0^∞ e^{-αt} dA^μ_t` for each `α`, with starting
/// points drawn uniformly and the result scaled by the volume. Paths run to
/// `30 / min α`, past which the weight is below `e^{-30}`.
pub fn revuz_check<R: Real>(
    spec: &ProcessSpec<R>,
    measure: &SmoothMeasure<R>,
    alphas: &[R],
    mc: McParams<R>,
) -> Result<Vec<RevuzRow<R>>> {
    mc.validate()?;
    measure.validate(&spec.domain)?;
    if alphas.is_empty() || alphas.iter().any(|&a| !(a > R::zero())) {
        return Err(LabError::InvalidParameter("revuz check needs positive rates".into()));
    }
    if measure.is_surface() && !spec.is_reflected() {
        return Err(LabError::Unsupported("surface measure needs the reflected process".into()));
    }
    let volume = spec
        .domain
        .volume()
        .ok_or_else(|| LabError::Unsupported("revuz check needs a bounded domain".into()))?;
    let mass = measure.total_mass(&spec.domain)?;
    let a_min = alphas.iter().copied().fold(R::infinity(), R::min);
    let horizon = R::of(30.0) / a_min;
    let walker = spec.walker(mc.dt);
    let dim = spec.dim();
    let accs = accumulate_dyn(
        mc.n_paths,
        alphas.len(),
        || WalkScratch::new(dim),
        |s, i, out| {
            let mut rng = RngStream::new(mc.seed, i as u64).rng();
            let x0 = spec.domain.sample_uniform(&mut rng).expect("bounded domain");
            s.x.copy_from_slice(&x0);
            let mut integs: Vec<AfIntegrator<'_, R>> =
                alphas.iter().map(|&a| AfIntegrator::new(measure, &spec.domain).with_discount(a)).collect();
            for integ in integs.iter_mut() {
                integ.start(R::zero(), &x0, |_, _| R::one());
            }
            walker.walk(s, horizon, &mut rng, |v| {
                for (k, integ) in integs.iter_mut().enumerate() {
                    out[k] += integ.step(v, |_, _| R::one());
                }
            });
            for (o, &a) in out.iter_mut().zip(alphas) {
                *o *= a * volume;
            }
        },
    );
    alphas
        .iter()
        .zip(&accs)
        .map(|(&alpha, acc)| {
            Ok(RevuzRow { alpha, estimate: MCEstimate::from_welford(acc, mc.meta(horizon))?, total_mass: mass })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::simulate;
    use approx::assert_relative_eq;

    fn unit() -> DomainSpec<f64> {
        DomainSpec::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn zero_measure_gives_zero_af() {
        let spec = ProcessSpec::killed_brownian(unit()).unwrap();
        let p = simulate(&spec, &[0.5], 1.0, 1e-3, RngStream::new(1, 2)).unwrap();
        let a = evaluate_af(&p, &SmoothMeasure::zero(), &unit()).unwrap();
        assert!(a.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lebesgue_af_is_elapsed_time() {
        let spec = ProcessSpec::killed_brownian(unit()).unwrap();
        for i in 0..20 {
            let p = simulate(&spec, &[0.5], 0.3, 1e-3, RngStream::new(2, i)).unwrap();
            let a = evaluate_af(&p, &SmoothMeasure::unit_lebesgue(), &unit()).unwrap();
            let end = p.lifetime.min(p.horizon);
            assert_relative_eq!(a.total(), end, epsilon = 1e-12);
            assert_relative_eq!(a.at(0.1), 0.1f64.min(end), epsilon = 1e-3);
        }
    }

    #[test]
    fn surface_af_equals_local_time() {
        let spec = ProcessSpec::reflected_brownian(unit()).unwrap();
        let p = simulate(&spec, &[0.05], 1.0, 1e-3, RngStream::new(3, 1)).unwrap();
        let m = SmoothMeasure::surface(SpatialFn::constant(1.0));
        let a = evaluate_af(&p, &m, &unit()).unwrap();
        let l = p.local_time.as_ref().unwrap();
        for (v, lt) in a.values.iter().zip(l) {
            assert_relative_eq!(*v, *lt, epsilon = 1e-12);
        }
    }

    #[test]
    fn surface_af_on_killed_path_is_unsupported() {
        let spec = ProcessSpec::killed_brownian(unit()).unwrap();
        let p = simulate(&spec, &[0.5], 1.0, 1e-3, RngStream::new(1, 2)).unwrap();
        let m = SmoothMeasure::surface(SpatialFn::constant(1.0));
        assert!(matches!(evaluate_af(&p, &m, &unit()), Err(LabError::Unsupported(_))));
    }

    #[test]
    fn af_is_monotone_and_flat_after_lifetime() {
        let spec = ProcessSpec::killed_brownian(unit()).unwrap();
        let m = SmoothMeasure::mollified_point(vec![0.5], 1.0, 0.1).unwrap();
        for i in 0..30 {
            let p = simulate(&spec, &[0.45], 2.0, 1e-3, RngStream::new(4, i)).unwrap();
            let a = evaluate_af(&p, &m, &unit()).unwrap();
            assert!(a.values.windows(2).all(|w| w[1] >= w[0]));
            if p.lifetime.is_finite() {
                assert_eq!(a.at(p.lifetime), a.at(p.lifetime + 5.0));
            }
        }
    }

    #[test]
    fn weighted_integral_reductions() {
        let spec = ProcessSpec::killed_brownian(unit()).unwrap();
        let m = SmoothMeasure::unit_lebesgue();
        let p = simulate(&spec, &[0.5], 1.0, 1e-3, RngStream::new(5, 3)).unwrap();
        let a = evaluate_af(&p, &m, &unit()).unwrap().total();
        let one = weighted_af_integral(&p, &m, &unit(), |_, _| 1.0, &0.0).unwrap();
        assert_relative_eq!(one, a, epsilon = 1e-12);
        let lin = weighted_af_integral(&p, &m, &unit(), |_, y| -y, &2.5).unwrap();
        assert_relative_eq!(lin, -2.5 * a, epsilon = 1e-12);
    }

    #[test]
    fn mollifier_validation() {
        assert!(SmoothMeasure::mollified_point(vec![0.5], 1.0, 0.0).is_err());
        let near = SmoothMeasure::mollified_point(vec![0.05], 1.0, 0.1).unwrap();
        assert!(near.validate(&unit()).is_err());
        let ok = SmoothMeasure::mollified_point(vec![0.5], 2.0, 0.1).unwrap();
        assert!(ok.validate(&unit()).is_ok());
        assert_eq!(ok.total_mass(&unit()).unwrap(), 2.0);
        let neg = SmoothMeasure::lebesgue(SpatialFn::new("neg", |x: &[f64]| x[0] - 0.5));
        assert!(neg.validate(&unit()).is_err());
    }

    #[test]
    fn total_masses() {
        let sq = SmoothMeasure::lebesgue(SpatialFn::new("2x", |x: &[f64]| 2.0 * x[0]));
        assert_relative_eq!(sq.total_mass(&unit()).unwrap(), 1.0, epsilon = 1e-9);
        let s = SmoothMeasure::surface(SpatialFn::constant(1.0));
        assert_eq!(s.total_mass(&unit()).unwrap(), 2.0);
        let sq2 = DomainSpec::boxed(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert_relative_eq!(s.total_mass(&sq2).unwrap(), 6.0, epsilon = 1e-9);
        let ball = DomainSpec::ball(vec![0.0, 0.0], 1.0).unwrap();
        let m = SmoothMeasure::lebesgue(SpatialFn::new("one", |_: &[f64]| 1.0));
        assert_relative_eq!(m.total_mass(&ball).unwrap(), std::f64::consts::PI, epsilon = 1e-3);
    }

    #[test]
    fn mollifier_integrates_to_mass() {
        let m = SmoothMeasure::mollified_point(vec![0.5, 0.5], 3.0, 0.2).unwrap();
        let n = 400;
        let h = 1.0 / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += m.density(&[(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]) * h * h;
            }
        }
        assert_relative_eq!(s, 3.0, epsilon = 1e-3);
    }
}
