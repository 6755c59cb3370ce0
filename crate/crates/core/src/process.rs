//! Path simulation for killed Brownian motion, reflected Brownian motion and
//! killed symmetric stable processes.
//!
//! Brownian variants are normalized to the generator `½Δ`. The stable process
//! has `E exp(i ξ·(X_t - X_0)) = exp(-t |ξ|^α)`, i.e. generator `-(-Δ)^{α/2}`.
//!
//! Exit detection for killed Brownian motion combines the endpoint test with
//! the Brownian-bridge crossing probability of each step, which removes the
//! `O(√dt)` lifetime bias of a plain Euler scheme. Reflection is applied
//! coordinate-wise: each step samples the bridge extremum towards the nearer
//! face exactly and regulates the path there, so the half-line case is exact in
//! law. The accumulated boundary local time `l` follows the convention
//! `X = X_0 + B + ½ ∫ n(X_s) dl_s`, i.e. `l` is twice the Skorokhod regulator.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{dist2, DomainSpec};
use crate::error::{LabError, Result};
use crate::estimate::{accumulate, ks_critical_value, ks_statistic, MCEstimate, McParams};
use crate::functional::{evaluate_af, SmoothMeasure};
use crate::real::Real;
use crate::rng::RngStream;

/// Exponent above which `exp(-x)` is treated as zero in crossing tests.
const NEGLIGIBLE_EXPONENT: f64 = 40.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProcessKind<R> {
    KilledBrownian,
    ReflectedBrownian,
    KilledStable { index: R },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec<R> {
    pub domain: DomainSpec<R>,
    pub kind: ProcessKind<R>,
    /// Rate `λ` of the killing weight `exp(-λt)`. Consumers apply it
    /// deterministically; paths are never killed at random for it.
    pub killing_rate: R,
}

impl<R: Real> ProcessSpec<R> {
    pub fn killed_brownian(domain: DomainSpec<R>) -> Result<Self> {
        domain.validate()?;
        Ok(Self { domain, kind: ProcessKind::KilledBrownian, killing_rate: R::zero() })
    }

    pub fn reflected_brownian(domain: DomainSpec<R>) -> Result<Self> {
        domain.validate()?;
        if !domain.is_rectangular() {
            return Err(LabError::Unsupported(
                "reflected Brownian motion needs an interval or box domain".into(),
            ));
        }
        Ok(Self { domain, kind: ProcessKind::ReflectedBrownian, killing_rate: R::zero() })
    }

    pub fn killed_stable(domain: DomainSpec<R>, index: R) -> Result<Self> {
        domain.validate()?;
        if !(index > R::zero() && index < R::of(2.0)) {
            return Err(LabError::InvalidParameter(format!(
                "stable index must lie in (0, 2), got {index}"
            )));
        }
        Ok(Self { domain, kind: ProcessKind::KilledStable { index }, killing_rate: R::zero() })
    }

    pub fn with_killing_rate(mut self, rate: R) -> Result<Self> {
        if !(rate >= R::zero()) || !rate.is_finite() {
            return Err(LabError::InvalidParameter(format!(
                "killing rate must be finite and >= 0, got {rate}"
            )));
        }
        self.killing_rate = rate;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let base = match &self.kind {
            ProcessKind::KilledBrownian => Self::killed_brownian(self.domain.clone()),
            ProcessKind::ReflectedBrownian => Self::reflected_brownian(self.domain.clone()),
            ProcessKind::KilledStable { index } => Self::killed_stable(self.domain.clone(), *index),
        }?;
        base.with_killing_rate(self.killing_rate).map(|_| ())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn is_killed(&self) -> bool {
        !matches!(self.kind, ProcessKind::ReflectedBrownian)
    }

    pub fn is_reflected(&self) -> bool {
        matches!(self.kind, ProcessKind::ReflectedBrownian)
    }

    /// Finite expected lifetime: a killed process on a bounded domain.
    pub fn is_transient(&self) -> bool {
        self.is_killed() && self.domain.is_bounded()
    }

    /// Checks a starting point: outside the closure is an error; `Ok(false)`
    /// flags a killed process started on the boundary (lifetime zero).
    pub fn check_start(&self, x0: &[R]) -> Result<bool> {
        if x0.len() != self.dim() {
            return Err(LabError::Domain(format!(
                "start point has dimension {}, domain has {}",
                x0.len(),
                self.dim()
            )));
        }
        if !self.domain.closure_contains(x0) {
            return Err(LabError::Domain(format!("start point {x0:?} outside the closed domain")));
        }
        Ok(!self.is_killed() || self.domain.contains(x0))
    }

    pub fn walker(&self, dt: R) -> Walker<'_, R> {
        Walker::new(self, dt)
    }
}

/// Boundary contact of a reflected path during one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact<R> {
    pub axis: usize,
    pub upper: bool,
    /// Local-time increment `dl` (twice the regulator increment).
    pub amount: R,
}

impl<R: Real> Contact<R> {
    /// The boundary point touched: `state` with the regulated coordinate on the face.
    pub fn point_into(&self, domain: &DomainSpec<R>, state: &[R], out: &mut Vec<R>) {
        out.clear();
        out.extend_from_slice(state);
        if let Some((lo, hi)) = domain.axis_bounds(self.axis) {
            out[self.axis] = if self.upper { hi } else { lo };
        }
    }
}

/// One step as seen by a path consumer.
pub struct StepView<'a, R> {
    /// Elapsed time at the end of the step; the lifetime if the step killed the path.
    pub t: R,
    /// Length of the step; for a killing step, the time from its start to the lifetime.
    pub h: R,
    /// Position at `t`; for a killing step, the last position inside the domain.
    pub state: &'a [R],
    pub alive: bool,
    pub contacts: &'a [Contact<R>],
}

/// Reusable buffers for walking paths without allocation.
#[derive(Clone, Debug, Default)]
pub struct WalkScratch<R> {
    pub x: Vec<R>,
    pub y: Vec<R>,
    pub contacts: Vec<Contact<R>>,
    pub point: Vec<R>,
}

impl<R: Real> WalkScratch<R> {
    pub fn new(dim: usize) -> Self {
        Self {
            x: vec![R::zero(); dim],
            y: vec![R::zero(); dim],
            contacts: Vec::with_capacity(2 * dim),
            point: Vec::with_capacity(dim),
        }
    }
}

/// Time grid `0 = t_0 < ... < t_n = horizon` with uniform steps except a
/// possibly shorter last one.
#[derive(Clone, Copy, Debug)]
pub struct TimeGrid<R> {
    pub dt: R,
    pub horizon: R,
    pub n_steps: usize,
}

impl<R: Real> TimeGrid<R> {
    pub fn new(dt: R, horizon: R) -> Self {
        let ratio = horizon / dt;
        let n = (ratio - R::of(1e-9)).ceil().to_usize().unwrap_or(0).max(1);
        Self { dt, horizon, n_steps: n }
    }

    #[inline]
    pub fn time(&self, k: usize) -> R {
        if k >= self.n_steps {
            self.horizon
        } else {
            R::of_usize(k) * self.dt
        }
    }
}

/// Single-path stepping engine for a [`ProcessSpec`].
pub struct Walker<'a, R> {
    spec: &'a ProcessSpec<R>,
    dt: R,
    sqrt_dt: R,
    stable_scale: R,
}

impl<'a, R: Real> Walker<'a, R> {
    pub fn new(spec: &'a ProcessSpec<R>, dt: R) -> Self {
        let stable_scale = match spec.kind {
            ProcessKind::KilledStable { index } => dt.powf(R::one() / index),
            _ => R::zero(),
        };
        Self { spec, dt, sqrt_dt: dt.sqrt(), stable_scale }
    }

    pub fn spec(&self) -> &ProcessSpec<R> {
        self.spec
    }

    pub fn dt(&self) -> R {
        self.dt
    }

    /// Walks from `scratch.x` (overwritten in place) up to elapsed time
    /// `horizon` or the lifetime, calling `visit` after each step. Returns the
    /// lifetime, `+∞` if the path survives the horizon. A killed process started
    /// on the boundary returns `0` without stepping.
    pub fn walk<G, V>(&self, scratch: &mut WalkScratch<R>, horizon: R, rng: &mut G, mut visit: V) -> R
    where
        G: Rng + ?Sized,
        V: FnMut(&StepView<'_, R>),
    {
        if self.spec.is_killed() && !self.spec.domain.contains(&scratch.x) {
            return R::zero();
        }
        let grid = TimeGrid::new(self.dt, horizon);
        for k in 0..grid.n_steps {
            let t0 = grid.time(k);
            let t1 = grid.time(k + 1);
            let h = t1 - t0;
            scratch.contacts.clear();
            let alive = self.step(&mut scratch.x, &mut scratch.y, h, rng, &mut scratch.contacts);
            if alive {
                visit(&StepView { t: t1, h, state: &scratch.x, alive: true, contacts: &scratch.contacts });
            } else {
                let half = h / R::of(2.0);
                let zeta = t0 + half;
                visit(&StepView { t: zeta, h: half, state: &scratch.x, alive: false, contacts: &[] });
                return zeta;
            }
        }
        R::infinity()
    }

    /// Advances `x` by one step of length `h`. On a kill `x` keeps the last
    /// position inside the domain and `false` is returned.
    #[inline]
    pub fn step<G: Rng + ?Sized>(
        &self,
        x: &mut [R],
        y: &mut [R],
        h: R,
        rng: &mut G,
        contacts: &mut Vec<Contact<R>>,
    ) -> bool {
        match self.spec.kind {
            ProcessKind::KilledBrownian => {
                let s = if h == self.dt { self.sqrt_dt } else { h.sqrt() };
                for (yi, &xi) in y.iter_mut().zip(x.iter()) {
                    *yi = xi + s * R::standard_normal(rng);
                }
                if !self.spec.domain.contains(y) {
                    return false;
                }
                let p = bridge_exit_probability(&self.spec.domain, x, y, h);
                if p > R::zero() && R::open01(rng) < p {
                    return false;
                }
                x.copy_from_slice(y);
                true
            }
            ProcessKind::ReflectedBrownian => {
                let s = if h == self.dt { self.sqrt_dt } else { h.sqrt() };
                for (i, xi) in x.iter_mut().enumerate() {
                    let (lo, hi) = self.spec.domain.axis_bounds(i).expect("rectangular domain");
                    let z = s * R::standard_normal(rng);
                    *xi = reflect_coordinate(*xi, z, lo, hi, h, i, rng, contacts);
                }
                true
            }
            ProcessKind::KilledStable { index } => {
                let scale = if h == self.dt { self.stable_scale } else { h.powf(R::one() / index) };
                stable_increment(index, x.len(), rng, y);
                for (yi, &xi) in y.iter_mut().zip(x.iter()) {
                    *yi = xi + scale * *yi;
                }
                if !self.spec.domain.contains(y) {
                    return false;
                }
                x.copy_from_slice(y);
                true
            }
        }
    }
}

#[inline]
fn crossing_probability<R: Real>(d0: R, d1: R, h: R) -> R {
    let e = R::of(2.0) * d0 * d1 / h;
    if e > R::of(NEGLIGIBLE_EXPONENT) {
        R::zero()
    } else {
        (-e).exp()
    }
}

/// Probability that a Brownian bridge from `x` to `y` (both inside) over time
/// `h` leaves the domain. Exact for a half-space; faces are combined as
/// independent events on boxes and the sphere is treated as its tangent plane
/// on balls.
pub fn bridge_exit_probability<R: Real>(domain: &DomainSpec<R>, x: &[R], y: &[R], h: R) -> R {
    match domain {
        DomainSpec::Interval { a, b } => {
            let p_lo = crossing_probability(x[0] - *a, y[0] - *a, h);
            let p_hi = crossing_probability(*b - x[0], *b - y[0], h);
            R::one() - (R::one() - p_lo) * (R::one() - p_hi)
        }
        DomainSpec::Box { lows, highs } => {
            let mut survive = R::one();
            for i in 0..x.len() {
                let p_lo = crossing_probability(x[i] - lows[i], y[i] - lows[i], h);
                let p_hi = crossing_probability(highs[i] - x[i], highs[i] - y[i], h);
                survive *= (R::one() - p_lo) * (R::one() - p_hi);
            }
            R::one() - survive
        }
        DomainSpec::Ball { center, radius } => {
            let d0 = *radius - dist2(x, center).sqrt();
            let d1 = *radius - dist2(y, center).sqrt();
            crossing_probability(d0, d1, h)
        }
        DomainSpec::FullSpace { .. } => R::zero(),
    }
}

/// One reflected step of a coordinate on `[lo, hi]` with Brownian increment `z`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn reflect_coordinate<R: Real, G: Rng + ?Sized>(
    x: R,
    z: R,
    lo: R,
    hi: R,
    h: R,
    axis: usize,
    rng: &mut G,
    contacts: &mut Vec<Contact<R>>,
) -> R {
    let two = R::of(2.0);
    let mut y;
    if x - lo <= hi - x {
        // regulate at the lower face using the exact bridge minimum
        let end = x + z - lo;
        let reachable = end <= R::zero() || two * (x - lo) * end / h <= R::of(NEGLIGIBLE_EXPONENT);
        let mut reg = R::zero();
        if reachable {
            let u = R::open01(rng);
            let m = (z - (z * z - two * h * u.ln()).sqrt()) / two;
            reg = (lo - x - m).max(R::zero());
        }
        y = x + z + reg;
        if reg > R::zero() {
            contacts.push(Contact { axis, upper: false, amount: two * reg });
        }
        if y > hi {
            contacts.push(Contact { axis, upper: true, amount: two * (y - hi) });
            y = hi;
        }
    } else {
        let end = hi - x - z;
        let reachable = end <= R::zero() || two * (hi - x) * end / h <= R::of(NEGLIGIBLE_EXPONENT);
        let mut reg = R::zero();
        if reachable {
            let u = R::open01(rng);
            let m = (z + (z * z - two * h * u.ln()).sqrt()) / two;
            reg = (x + m - hi).max(R::zero());
        }
        y = x + z - reg;
        if reg > R::zero() {
            contacts.push(Contact { axis, upper: true, amount: two * reg });
        }
        if y < lo {
            contacts.push(Contact { axis, upper: false, amount: two * (lo - y) });
            y = lo;
        }
    }
    y
}

/// Writes a unit-time symmetric stable increment, `E exp(i ξ·S) = exp(-|ξ|^α)`, into `out`.
///
/// One dimension uses Chambers-Mallows-Stuck; higher dimensions use the
/// sub-Gaussian form `√(2A) G` with `A` positive `(α/2)`-stable (Kanter).
pub fn stable_increment<R: Real, G: Rng + ?Sized>(index: R, dim: usize, rng: &mut G, out: &mut [R]) {
    let pi = R::PI();
    let half = R::of(0.5);
    if dim == 1 {
        let v = pi * (R::open01(rng) - half);
        let w = R::exp1(rng);
        out[0] = if (index - R::one()).abs() < R::of(1e-12) {
            v.tan()
        } else {
            let a = index;
            (a * v).sin() / v.cos().powf(R::one() / a)
                * ((v - a * v).cos() / w).powf((R::one() - a) / a)
        };
        return;
    }
    let beta = index * half;
    let v = pi * R::open01(rng);
    let w = R::exp1(rng);
    let a = (beta * v).sin() / v.sin().powf(R::one() / beta)
        * (((R::one() - beta) * v).sin() / w).powf((R::one() - beta) / beta);
    let s = (R::of(2.0) * a).sqrt();
    for o in out.iter_mut().take(dim) {
        *o = s * R::standard_normal(rng);
    }
}

/// One recorded trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample<R> {
    pub dim: usize,
    /// Absolute time of the first state; `times` are elapsed from it.
    pub start_time: R,
    pub times: Vec<R>,
    /// Row-major positions, `dim` values per entry of `times`.
    pub states: Vec<R>,
    /// Elapsed time of killing; `+∞` if the path survived the horizon.
    pub lifetime: R,
    /// Cumulative boundary local time at each entry of `times` (reflected paths only).
    pub local_time: Option<Vec<R>>,
    /// Contacts with the step index `k` of the state they end at.
    pub contacts: Vec<(usize, Contact<R>)>,
    pub horizon: R,
}

impl<R: Real> PathSample<R> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[R] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn survived(&self) -> bool {
        self.lifetime.is_infinite()
    }

    pub fn final_local_time(&self) -> R {
        self.local_time
            .as_ref()
            .and_then(|l| l.last().copied())
            .unwrap_or_else(R::zero)
    }

    /// CSV rows `path_id,t,x_1..x_d,alive,local_time` (no header).
    pub fn write_csv<W: Write>(&self, path_id: usize, out: &mut W) -> std::io::Result<()> {
        for k in 0..self.len() {
            write!(out, "{path_id},{}", (self.start_time + self.times[k]).as_f64())?;
            for v in self.state(k) {
                write!(out, ",{}", v.as_f64())?;
            }
            let alive = self.times[k] < self.lifetime;
            let l = self.local_time.as_ref().map(|l| l[k]).unwrap_or_else(R::zero);
            writeln!(out, ",{},{}", u8::from(alive), l.as_f64())?;
        }
        Ok(())
    }

    pub fn csv_header(dim: usize) -> String {
        let xs: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
        format!("path_id,t,{},alive,local_time", xs.join(","))
    }
}

/// Simulates one path started at `x0` at time 0.
pub fn simulate<R: Real>(spec: &ProcessSpec<R>, x0: &[R], horizon: R, dt: R, stream: RngStream) -> Result<PathSample<R>> {
    simulate_from(spec, R::zero(), x0, horizon, dt, stream)
}

/// Simulates one path of the time-space process started at `(start_time, x0)`.
pub fn simulate_from<R: Real>(
    spec: &ProcessSpec<R>,
    start_time: R,
    x0: &[R],
    horizon: R,
    dt: R,
    stream: RngStream,
) -> Result<PathSample<R>> {
    if !(dt > R::zero()) || !(horizon > R::zero()) {
        return Err(LabError::InvalidParameter("dt and horizon must be positive".into()));
    }
    let inside = spec.check_start(x0)?;
    let dim = spec.dim();
    let reflected = spec.is_reflected();
    let mut path = PathSample {
        dim,
        start_time,
        times: vec![R::zero()],
        states: x0.to_vec(),
        lifetime: R::infinity(),
        local_time: reflected.then(|| vec![R::zero()]),
        contacts: Vec::new(),
        horizon,
    };
    if !inside {
        path.lifetime = R::zero();
        return Ok(path);
    }
    let mut rng = stream.rng();
    let mut scratch = WalkScratch::new(dim);
    scratch.x.copy_from_slice(x0);
    let walker = spec.walker(dt);
    let mut l = R::zero();
    let lifetime = walker.walk(&mut scratch, horizon, &mut rng, |v| {
        if !v.alive {
            return;
        }
        path.times.push(v.t);
        path.states.extend_from_slice(v.state);
        let k = path.times.len() - 1;
        for c in v.contacts {
            l += c.amount;
            path.contacts.push((k, *c));
        }
        if let Some(lt) = path.local_time.as_mut() {
            lt.push(l);
        }
    });
    path.lifetime = lifetime;
    Ok(path)
}

/// Mean exit time with survivor diagnostics.
pub fn estimate_mean_exit_time<R: Real>(
    spec: &ProcessSpec<R>,
    x0: &[R],
    mc: McParams<R>,
    horizon: R,
) -> Result<MCEstimate<R>> {
    mc.validate()?;
    if !spec.is_killed() {
        return Err(LabError::Unsupported(
            "mean exit time of a conservative (reflected) process".into(),
        ));
    }
    let inside = spec.check_start(x0)?;
    let walker = spec.walker(mc.dt);
    let [time, survived] = accumulate(
        mc.n_paths,
        || WalkScratch::new(spec.dim()),
        |s, i| {
            if !inside {
                return [R::zero(), R::zero()];
            }
            let mut rng = RngStream::new(mc.seed, i as u64).rng();
            s.x.copy_from_slice(x0);
            let zeta = walker.walk(s, horizon, &mut rng, |_| {});
            if zeta.is_finite() {
                [zeta, R::zero()]
            } else {
                [horizon, R::one()]
            }
        },
    );
    let mut est = MCEstimate::from_welford(&time, mc.meta(horizon))?;
    if survived.mean >= R::of(0.01) {
        est = est.with_warning(format!(
            "survivor fraction {:.4} >= 1%: survivors contribute the horizon, estimate biased low",
            survived.mean
        ));
    }
    Ok(est)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftLawResult<R> {
    pub statistic: R,
    /// KS critical value at the 1% level for the two sample sizes.
    pub critical_value: f64,
    pub n_paths: usize,
}

impl<R: Real> ShiftLawResult<R> {
    pub fn passed(&self) -> bool {
        self.statistic.as_f64() < self.critical_value
    }
}

/// Compares the law of `A^μ` over `[0, t]` for paths started at time 0 with the
/// law of its increment over `[s, s + t]` for paths started at time `s`.
/// The two samples use disjoint stream ranges.
pub fn shift_law_check<R: Real>(
    spec: &ProcessSpec<R>,
    measure: &SmoothMeasure<R>,
    x0: &[R],
    s: R,
    t: R,
    mc: McParams<R>,
) -> Result<ShiftLawResult<R>> {
    mc.validate()?;
    if s < R::zero() {
        return Err(LabError::InvalidParameter("shift s must be >= 0".into()));
    }
    let n = mc.n_paths;
    let sample = |start: R, offset: usize| -> Result<Vec<R>> {
        (0..n)
            .map(|i| {
                let stream = RngStream::new(mc.seed, (offset + i) as u64);
                let path = simulate_from(spec, start, x0, t, mc.dt, stream)?;
                let af = evaluate_af(&path, measure, &spec.domain)?;
                Ok(af.at_absolute(start + t) - af.at_absolute(start))
            })
            .collect()
    };
    let mut a = sample(R::zero(), 0)?;
    let mut b = sample(s, n)?;
    Ok(ShiftLawResult {
        statistic: ks_statistic(&mut a, &mut b),
        critical_value: ks_critical_value(n, n, 0.01),
        n_paths: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_interval() -> DomainSpec<f64> {
        DomainSpec::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn killed_start_on_boundary_has_zero_lifetime() {
        let spec = ProcessSpec::killed_brownian(unit_interval()).unwrap();
        let p = simulate(&spec, &[0.0], 1.0, 1e-3, RngStream::new(1, 0)).unwrap();
        assert_eq!(p.lifetime, 0.0);
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn start_outside_closure_is_domain_error() {
        let spec = ProcessSpec::killed_brownian(unit_interval()).unwrap();
        let err = simulate(&spec, &[1.5], 1.0, 1e-3, RngStream::new(1, 0)).unwrap_err();
        assert!(matches!(err, LabError::Domain(_)));
    }

    #[test]
    fn rejects_bad_process_parameters() {
        assert!(ProcessSpec::killed_stable(unit_interval(), 2.0).is_err());
        assert!(ProcessSpec::killed_stable(unit_interval(), 0.0).is_err());
        let ball = DomainSpec::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert!(ProcessSpec::reflected_brownian(ball).is_err());
        let spec = ProcessSpec::killed_brownian(unit_interval()).unwrap();
        assert!(spec.with_killing_rate(-1.0).is_err());
    }

    #[test]
    fn killed_path_invariants() {
        let spec = ProcessSpec::killed_brownian(unit_interval()).unwrap();
        for i in 0..50 {
            let p = simulate(&spec, &[0.5], 2.0, 1e-3, RngStream::new(3, i)).unwrap();
            assert_eq!(p.times[0], 0.0);
            assert!(p.times.windows(2).all(|w| w[0] < w[1]));
            assert!(p.lifetime.is_finite(), "exit before t = 2 is almost sure here");
            assert!(p.lifetime <= p.horizon);
            assert!(p.times.iter().all(|&t| t < p.lifetime));
            for k in 0..p.len() {
                assert!(spec.domain.contains(p.state(k)));
            }
        }
    }

    #[test]
    fn reflected_path_invariants() {
        let spec = ProcessSpec::reflected_brownian(unit_interval()).unwrap();
        let mut touched = false;
        for i in 0..20 {
            let p = simulate(&spec, &[0.1], 1.0, 1e-3, RngStream::new(5, i)).unwrap();
            assert!(p.survived());
            let l = p.local_time.as_ref().unwrap();
            assert!(l.windows(2).all(|w| w[1] >= w[0]));
            for k in 0..p.len() {
                assert!(spec.domain.closure_contains(p.state(k)));
            }
            // local time moves exactly on the steps listing a contact
            for k in 1..p.len() {
                let has_contact = p.contacts.iter().any(|(j, _)| *j == k);
                assert_eq!(l[k] > l[k - 1], has_contact);
            }
            let total: f64 = p.contacts.iter().map(|(_, c)| c.amount).sum();
            assert_relative_eq!(total, p.final_local_time(), epsilon = 1e-12);
            touched |= p.final_local_time() > 0.0;
        }
        assert!(touched);
    }

    #[test]
    fn identical_streams_reproduce_paths() {
        for spec in [
            ProcessSpec::killed_brownian(unit_interval()).unwrap(),
            ProcessSpec::reflected_brownian(unit_interval()).unwrap(),
            ProcessSpec::killed_stable(unit_interval(), 1.3).unwrap(),
        ] {
            let a = simulate(&spec, &[0.4], 0.5, 1e-3, RngStream::new(11, 7)).unwrap();
            let b = simulate(&spec, &[0.4], 0.5, 1e-3, RngStream::new(11, 7)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bridge_correction_only_adds_kills() {
        // naive endpoint test kills only when the endpoint is outside; the bridge
        // test kills at least those paths
        let d = unit_interval();
        for &(x, y) in &[(0.05, 0.02), (0.3, 0.31), (0.01, 0.99), (0.5, 0.5)] {
            let p = bridge_exit_probability(&d, &[x], &[y], 1e-3);
            assert!((0.0..=1.0).contains(&p));
        }
        assert!(bridge_exit_probability(&d, &[0.5], &[0.5], 1e-3) < 1e-100);
        assert!(bridge_exit_probability(&d, &[0.001], &[0.001], 1e-3) > 0.99);
    }

    #[test]
    fn time_grid_covers_horizon() {
        let g = TimeGrid::new(0.3, 1.0);
        assert_eq!(g.n_steps, 4);
        assert_relative_eq!(g.time(3), 0.9, epsilon = 1e-15);
        assert_eq!(g.time(4), 1.0);
        let g = TimeGrid::new(0.25, 1.0);
        assert_eq!(g.n_steps, 4);
    }

    #[test]
    fn exit_time_unsupported_for_reflected() {
        let spec = ProcessSpec::reflected_brownian(unit_interval()).unwrap();
        let mc = McParams::new(10, 1e-3, 1).unwrap();
        let err = estimate_mean_exit_time(&spec, &[0.5], mc, 1.0).unwrap_err();
        assert!(matches!(err, LabError::Unsupported(_)));
    }

    #[test]
    fn csv_dump_has_one_row_per_state() {
        let spec = ProcessSpec::reflected_brownian(unit_interval()).unwrap();
        let p = simulate(&spec, &[0.5], 0.01, 1e-3, RngStream::new(1, 1)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), p.len());
        assert_eq!(PathSample::<f64>::csv_header(1), "path_id,t,x_1,alive,local_time");
        assert!(text.lines().all(|l| l.split(',').count() == 5));
    }

    #[test]
    fn works_in_single_precision() {
        let spec = ProcessSpec::<f32>::killed_brownian(DomainSpec::interval(0.0, 1.0).unwrap()).unwrap();
        let mc = McParams::new(2000, 1e-3f32, 9).unwrap();
        let e = estimate_mean_exit_time(&spec, &[0.5], mc, 5.0).unwrap();
        assert!((e.mean - 0.25).abs() < 4.0 * e.std_error + 0.01);
    }
}
