//! Large-time behaviour: the gap `|u(t,·) - v|`, the bound
//! `3e^{-λt}(P⁰_t|φ| + P⁰_t R⁰_λ(|f(·,0)| + |g(·,0)|·μ))` and decay-rate fits.

use std::io::Write;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::estimate::{MCEstimate, McParams};
use crate::feynman_kac::{potential_grid, semigroup_apply, semigroup_grid};
use crate::func::{FieldRead, SpatialFn};
use crate::functional::SmoothMeasure;
use crate::grid::{linspace, GridFunction};
use crate::process::ProcessSpec;
use crate::real::Real;
use crate::solver::{solve_elliptic, solve_parabolic, EllipticParams, ParabolicParams, ProblemSpec};

/// Recorded with every report.
pub const FACTOR_THREE_NOTE: &str =
    "the constant 3 in the bound exceeds e = lim_{q->0} (1-q)^{-1/q}, the limit of the geometric series factor";

pub const GRID_SUP_NOTE: &str = "suprema are over the solver grid, not the continuum";

pub const QE_NOTE: &str = "the bound holds quasi-everywhere; it is asserted at grid points with statistical slack";

/// Monte Carlo budgets of the nested bound estimator.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundParams<R> {
    /// Paths for the outer semigroup `P⁰_t`.
    pub outer: McParams<R>,
    /// Paths per grid point for the potential `Ψ`.
    pub psi: McParams<R>,
    /// Path horizon of the potential.
    pub psi_horizon: R,
}

impl<R: Real> BoundParams<R> {
    pub fn new(outer: McParams<R>, psi: McParams<R>, psi_horizon: R) -> Self {
        Self { outer, psi, psi_horizon }
    }
}

struct BoundField<'a, R> {
    phi_abs: SpatialFn<R>,
    psi: &'a GridFunction<R>,
}

impl<R: Real> FieldRead<R> for BoundField<'_, R> {
    #[inline]
    fn read(&self, x: &[R]) -> R {
        self.phi_abs.eval(x) + self.psi.interpolate(x)
    }
}

fn unkilled<R: Real>(spec: &ProcessSpec<R>) -> ProcessSpec<R> {
    ProcessSpec { killing_rate: R::zero(), ..spec.clone() }
}

/// `Ψ = R⁰_λ(|f(·,0)|·m + |g(·,0)|·μ)` on `grid`, for the process without killing.
pub fn potential_field<R: Real>(
    problem: &ProblemSpec<R>,
    grid: &GridFunction<R>,
    params: &BoundParams<R>,
) -> Result<GridFunction<R>> {
    let spec = unkilled(&problem.process);
    let lambda = problem.process.killing_rate;
    let grid = grid.with_values(vec![R::zero(); grid.len()])?.with_extension(problem.extension());
    let f0 = problem.coefficients.f.abs_at_zero();
    let g0 = problem.coefficients.g.abs_at_zero();
    let mut values = vec![R::zero(); grid.len()];
    let mut se = vec![R::zero(); grid.len()];
    let mut add = |part: GridFunction<R>| {
        let pse = part.std_errors.clone().unwrap_or_default();
        for p in 0..values.len() {
            values[p] += part.values[p];
            se[p] += pse.get(p).copied().unwrap_or_else(R::zero);
        }
    };
    if !f0.is_zero() {
        let leb = SmoothMeasure::unit_lebesgue();
        add(potential_grid(&spec, &leb, &f0, lambda, &grid, params.psi, params.psi_horizon)?);
    }
    if !g0.is_zero() && !problem.measure.is_zero() {
        add(potential_grid(&spec, &problem.measure, &g0, lambda, &grid, params.psi, params.psi_horizon)?);
    }
    Ok(grid.with_values(values)?.with_std_errors(se))
}

/// The bound on a grid at one time.
#[derive(Clone, Debug, Serialize)]
pub struct BoundGrid<R> {
    pub t: R,
    /// `3(P⁰_t|φ| + P⁰_t Ψ)`, the value without the killing weight.
    pub inner: GridFunction<R>,
    /// `e^{-λt}·inner`; its standard errors include the potential's.
    pub rhs: GridFunction<R>,
    pub outer_paths: usize,
    pub psi_paths: usize,
}

/// Bound values at every grid point for a precomputed potential `Ψ`.
pub fn bound_rhs_grid<R: Real>(
    problem: &ProblemSpec<R>,
    t: R,
    psi: &GridFunction<R>,
    grid: &GridFunction<R>,
    params: &BoundParams<R>,
) -> Result<BoundGrid<R>> {
    let spec = unkilled(&problem.process);
    let field = BoundField { phi_abs: problem.coefficients.phi.abs(), psi };
    let outer = semigroup_grid(&spec, &field, t, grid, params.outer)?;
    let three = R::of(3.0);
    let psi_se = psi.std_errors.as_ref().map(|s| s.iter().fold(R::zero(), |m, &v| m.max(v))).unwrap_or_else(R::zero);
    let inner_vals: Vec<R> = outer.values.iter().map(|&v| three * v).collect();
    let inner_se: Vec<R> = (0..grid.len()).map(|p| three * (outer.std_error(p) + psi_se)).collect();
    let inner = outer.with_values(inner_vals)?.with_std_errors(inner_se.clone());
    let w = (-problem.process.killing_rate * t).exp();
    let rhs = inner
        .with_values(inner.values.iter().map(|&v| v * w).collect())?
        .with_std_errors(inner_se.iter().map(|&s| s * w).collect());
    Ok(BoundGrid { t, inner, rhs, outer_paths: params.outer.n_paths, psi_paths: params.psi.n_paths })
}

/// The bound at a single point; `Ψ` is tabulated on `psi_grid` first.
pub fn bound_rhs<R: Real>(
    problem: &ProblemSpec<R>,
    t: R,
    x: &[R],
    psi_grid: &GridFunction<R>,
    params: &BoundParams<R>,
) -> Result<MCEstimate<R>> {
    let psi = potential_field(problem, psi_grid, params)?;
    let spec = unkilled(&problem.process);
    let field = BoundField { phi_abs: problem.coefficients.phi.abs(), psi: &psi };
    let est = semigroup_apply(&spec, &field, t, x, params.outer)?;
    let psi_se = psi.std_errors.as_ref().map(|s| s.iter().fold(R::zero(), |m, &v| m.max(v))).unwrap_or_else(R::zero);
    let w = R::of(3.0) * (-problem.process.killing_rate * t).exp();
    let mut out = est.scaled(w);
    out.std_error += w * psi_se;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayModel {
    /// `log y` against `log t`.
    Power,
    /// `log y` against `t`.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecaySeries {
    Bound,
    /// Flagged: only the one-sided inequality is guaranteed for the gap.
    Gap,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub series: DecaySeries,
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub flagged: bool,
}

/// Least squares of `log y` on `log t` or `t`.
pub fn fit_series(t: &[f64], y: &[f64], model: DecayModel) -> Result<(f64, f64, f64)> {
    if t.len() != y.len() || t.len() < 2 {
        return Err(LabError::InsufficientSignal("need at least two points".into()));
    }
    let xs: Vec<f64> = t
        .iter()
        .map(|&v| match model {
            DecayModel::Power => v.ln(),
            DecayModel::Exponential => v,
        })
        .collect();
    let ys: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
        return Err(LabError::InsufficientSignal("non-positive values in the series".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(LabError::InsufficientSignal("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

#[derive(Clone, Debug, Serialize)]
pub struct GapRow<R> {
    pub t: R,
    pub x: Vec<R>,
    pub u: R,
    pub v: R,
    pub gap: R,
    pub rhs: R,
    pub se_u: R,
    pub se_v: R,
    pub se_rhs: R,
    pub slack: R,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Margins<R> {
    /// `max (gap - rhs)` over all rows.
    pub max_excess: R,
    /// `max (gap - rhs - slack)`; nonpositive iff every row passes.
    pub max_excess_over_slack: R,
    /// `min (rhs - gap)` over rows with positive bound.
    pub min_headroom: R,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport<R> {
    pub t_grid: Vec<R>,
    pub rows: Vec<GapRow<R>>,
    pub budget: R,
    pub budget_formula: String,
    pub margins: Margins<R>,
    pub fitted_rate: Option<DecayFit>,
    pub notes: Vec<String>,
    pub elliptic_sweeps: usize,
}

impl<R: Real> GapReport<R> {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    fn rows_at(&self, t: R) -> impl Iterator<Item = &GapRow<R>> {
        self.rows.iter().filter(move |r| r.t == t)
    }

    pub fn sup_gap(&self, t: R) -> R {
        self.rows_at(t).fold(R::zero(), |m, r| m.max(r.gap))
    }

    pub fn sup_rhs(&self, t: R) -> R {
        self.rows_at(t).fold(R::zero(), |m, r| m.max(r.rhs))
    }

    /// Largest standard error of the series at `t`.
    fn noise(&self, t: R, series: DecaySeries) -> R {
        self.rows_at(t).fold(R::zero(), |m, r| match series {
            DecaySeries::Bound => m.max(r.se_rhs),
            DecaySeries::Gap => m.max(r.se_u + r.se_v),
        })
    }

    pub fn csv_header(dim: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=dim).map(|i| format!("x_{i}")));
        cols.extend(["u", "v", "gap", "rhs", "slack", "pass"].map(String::from));
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let dim = self.rows.first().map(|r| r.x.len()).unwrap_or(1);
        writeln!(out, "{}", Self::csv_header(dim))?;
        for r in &self.rows {
            write!(out, "{}", r.t)?;
            for c in &r.x {
                write!(out, ",{c}")?;
            }
            writeln!(out, ",{},{},{},{},{},{}", r.u, r.v, r.gap, r.rhs, r.slack, r.pass)?;
        }
        Ok(())
    }
}

/// Least-squares decay fit of `sup_x` of the chosen series over the report's times.
pub fn fit_decay<R: Real>(report: &GapReport<R>, model: DecayModel, series: DecaySeries) -> Result<DecayFit> {
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for &t in &report.t_grid {
        let y = match series {
            DecaySeries::Bound => report.sup_rhs(t),
            DecaySeries::Gap => report.sup_gap(t),
        };
        if y > R::of(5.0) * report.noise(t, series) && y > R::zero() {
            ts.push(t.as_f64());
            ys.push(y.as_f64());
        }
    }
    if ts.len() < 4 {
        return Err(LabError::InsufficientSignal(format!(
            "{} of {} times lie above five times the noise floor; at least 4 are needed",
            ts.len(),
            report.t_grid.len()
        )));
    }
    let (exponent, intercept, r_squared) = fit_series(&ts, &ys, model)?;
    Ok(DecayFit { model, series, exponent, intercept, r_squared, n_points: ts.len(), flagged: series == DecaySeries::Gap })
}

/// Settings of [`verify_convergence`].
#[derive(Clone, Copy, Debug)]
pub struct VerifyParams<R> {
    pub parabolic: ParabolicParams<R>,
    /// Time-slice length of the parabolic solve; every report time must be a multiple.
    pub slice: R,
    pub elliptic: EllipticParams<R>,
    pub bound: BoundParams<R>,
    /// Discretization budget; calibrated by grid refinement when absent.
    pub budget: Option<R>,
}

/// Midpoint refinement of a one-dimensional grid: `2n - 1` points on the same interval.
pub fn refine_grid<R: Real>(grid: &GridFunction<R>) -> Result<GridFunction<R>> {
    let axes: Vec<Vec<R>> = grid
        .axes
        .iter()
        .map(|a| linspace(a[0], a[a.len() - 1], 2 * a.len() - 1))
        .collect();
    let n = axes.iter().map(|a| a.len()).product();
    GridFunction::new(axes, vec![R::zero(); n], grid.extension)
}

pub const BUDGET_FORMULA: &str = "sup over the nodes of the coarse grid of |v_h - v_{h/2}|, where v_{h/2} solves the elliptic problem on the midpoint-refined grid";

/// Discretization budget from an elliptic solve on the grid and on its refinement.
pub fn calibrate_budget<R: Real>(
    problem: &ProblemSpec<R>,
    grid: &GridFunction<R>,
    coarse: &GridFunction<R>,
    params: &EllipticParams<R>,
) -> Result<R> {
    let fine_grid = refine_grid(grid)?;
    let fine = solve_elliptic(problem, &fine_grid, params)?.solution;
    Ok((0..coarse.len()).fold(R::zero(), |m, p| m.max((coarse.values[p] - fine.interpolate(&coarse.point(p))).abs())))
}

/// Solves both problems, evaluates the bound at each time and checks
/// `gap ≤ rhs + 3(SE_u + SE_v + SE_rhs) + budget` at every grid point.
pub fn verify_convergence<R: Real>(
    problem: &ProblemSpec<R>,
    t_grid: &[R],
    grid: &GridFunction<R>,
    params: &VerifyParams<R>,
) -> Result<GapReport<R>> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[0] < w[1])) || !(t_grid[0] > R::zero()) {
        return Err(LabError::InvalidParameter("time grid must be positive and increasing".into()));
    }
    let slice = params.slice;
    let t_max = *t_grid.last().unwrap();
    let n_time = (t_max / slice).round().to_usize().unwrap_or(0);
    for &t in t_grid {
        let k = (t / slice).round();
        if (k * slice - t).abs() > R::of(1e-9) * t.max(R::one()) {
            return Err(LabError::InvalidParameter(format!("time {t} is not a multiple of the slice {slice}")));
        }
    }
    let mut pp = params.parabolic;
    pp.n_time = n_time.max(1);
    let u = solve_parabolic(problem, t_max, grid, &pp)
        .map_err(|e| context(e, "parabolic solve"))?;
    let v = solve_elliptic(problem, grid, &params.elliptic).map_err(|e| context(e, "elliptic solve"))?;
    let budget = match params.budget {
        Some(b) => b,
        None => calibrate_budget(problem, grid, &v.solution, &params.elliptic)
            .map_err(|e| context(e, "budget calibration"))?,
    };
    let psi = potential_field(problem, grid, &params.bound).map_err(|e| context(e, "potential"))?;
    let three = R::of(3.0);
    let mut rows = Vec::new();
    for &t in t_grid {
        let ut = u.solution.at_time(t);
        let b = bound_rhs_grid(problem, t, &psi, grid, &params.bound)?;
        for p in 0..grid.len() {
            let gap = (ut.values[p] - v.solution.values[p]).abs();
            let (se_u, se_v, se_rhs) = (ut.std_error(p), v.solution.std_error(p), b.rhs.std_error(p));
            let slack = three * (se_u + se_v + se_rhs) + budget;
            let rhs = b.rhs.values[p];
            rows.push(GapRow {
                t,
                x: grid.point(p),
                u: ut.values[p],
                v: v.solution.values[p],
                gap,
                rhs,
                se_u,
                se_v,
                se_rhs,
                slack,
                pass: gap <= rhs + slack,
            });
        }
    }
    let margins = Margins {
        max_excess: rows.iter().map(|r| r.gap - r.rhs).fold(R::neg_infinity(), R::max),
        max_excess_over_slack: rows.iter().map(|r| r.gap - r.rhs - r.slack).fold(R::neg_infinity(), R::max),
        min_headroom: rows.iter().filter(|r| r.rhs > R::zero()).map(|r| r.rhs - r.gap).fold(R::infinity(), R::min),
    };
    let mut report = GapReport {
        t_grid: t_grid.to_vec(),
        rows,
        budget,
        budget_formula: if params.budget.is_some() { "fixed by configuration".into() } else { BUDGET_FORMULA.into() },
        margins,
        fitted_rate: None,
        notes: vec![FACTOR_THREE_NOTE.into(), GRID_SUP_NOTE.into(), QE_NOTE.into()],
        elliptic_sweeps: v.sweeps,
    };
    report.fitted_rate = fit_decay(&report, DecayModel::Exponential, DecaySeries::Bound).ok();
    Ok(report)
}

fn context(e: LabError, what: &str) -> LabError {
    match e {
        LabError::NonConvergence { context, iterations, last_change, trace } => LabError::NonConvergence {
            context: format!("{what}: {context}"),
            iterations,
            last_change,
            trace,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::func::CoefFn;
    use crate::solver::Coefficients;
    use std::f64::consts::PI;

    #[test]
    fn fits_recover_exact_rates() {
        let t = [0.5f64, 1.0, 2.0, 4.0];
        let y: Vec<f64> = t.iter().map(|s| 2.0 * s.powf(-1.5)).collect();
        let (k, c, r2) = fit_series(&t, &y, DecayModel::Power).unwrap();
        assert!((k + 1.5).abs() < 1e-12 && (c - 2f64.ln()).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        let y: Vec<f64> = t.iter().map(|s| (-3.0 * s).exp()).collect();
        assert!((fit_series(&t, &y, DecayModel::Exponential).unwrap().0 + 3.0).abs() < 1e-12);
        assert!(fit_series(&t, &[1.0, 0.0, 1.0, 1.0], DecayModel::Power).is_err());
    }

    fn heat(lambda: f64) -> ProblemSpec<f64> {
        let d = DomainSpec::interval(0.0, 1.0).unwrap();
        let spec = ProcessSpec::killed_brownian(d).unwrap().with_killing_rate(lambda).unwrap();
        let phi = SpatialFn::new("sin", |x: &[f64]| (PI * x[0]).sin());
        ProblemSpec::new(spec, Coefficients::linear(phi), SmoothMeasure::zero()).unwrap()
    }

    #[test]
    fn zero_data_bound_is_zero_and_killing_factorizes() {
        let d = DomainSpec::interval(0.0, 1.0).unwrap();
        let spec = ProcessSpec::killed_brownian(d).unwrap();
        let zero = ProblemSpec::new(spec, Coefficients::linear(SpatialFn::zero()), SmoothMeasure::zero()).unwrap();
        let grid = zero.grid(5).unwrap();
        let bp = BoundParams::new(McParams::new(200, 1e-2, 1).unwrap(), McParams::new(200, 1e-2, 2).unwrap(), 5.0);
        let est = bound_rhs(&zero, 0.2, &[0.5], &grid, &bp).unwrap();
        assert_eq!(est.mean, 0.0);

        let p = heat(1.0);
        let psi = potential_field(&p, &grid, &bp).unwrap();
        let b = bound_rhs_grid(&p, 0.3, &psi, &grid, &bp).unwrap();
        let p0 = heat(0.0);
        let b0 = bound_rhs_grid(&p0, 0.3, &psi, &grid, &bp).unwrap();
        for i in 0..grid.len() {
            assert_eq!(b.inner.values[i], b0.rhs.values[i]);
            assert_eq!(b.rhs.values[i], b.inner.values[i] * (-0.3f64).exp());
        }
    }

    #[test]
    fn heat_bound_value() {
        let p = heat(0.0);
        let grid = p.grid(5).unwrap();
        let bp = BoundParams::new(McParams::new(20_000, 1e-3, 5).unwrap(), McParams::new(100, 1e-2, 2).unwrap(), 5.0);
        let est = bound_rhs(&p, 0.2, &[0.5], &grid, &bp).unwrap();
        let exact = 3.0 * (-PI * PI * 0.1).exp();
        assert!(est.agrees_with(exact, 4.0, 0.02 * exact), "{} vs {exact}", est.mean);
    }

    #[test]
    fn linear_heat_report_passes() {
        let p = heat(0.0);
        let grid = p.grid(5).unwrap();
        let mc = McParams::new(1000, 2e-3, 9).unwrap();
        let params = VerifyParams {
            parabolic: ParabolicParams::new(mc, 1),
            slice: 0.1,
            elliptic: EllipticParams::new(mc, 5.0),
            bound: BoundParams::new(mc.with_paths(20_000), mc, 5.0),
            budget: None,
        };
        let report = verify_convergence(&p, &[0.1, 0.2, 0.3, 0.4], &grid, &params).unwrap();
        assert!(report.all_pass());
        assert!(report.notes.iter().any(|n| n.contains("exceeds e")));
        assert_eq!(report.elliptic_sweeps, 2);
        let fit = report.fitted_rate.clone().unwrap();
        assert!((fit.exponent + PI * PI / 2.0).abs() < 0.1 * PI * PI / 2.0, "{}", fit.exponent);
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + 4 * 5);
    }

    #[test]
    fn insufficient_signal_is_reported() {
        let p = ProblemSpec::new(
            ProcessSpec::killed_brownian(DomainSpec::interval(0.0, 1.0).unwrap()).unwrap(),
            Coefficients::new(CoefFn::zero(), CoefFn::zero(), SpatialFn::zero(), 0.0),
            SmoothMeasure::zero(),
        )
        .unwrap();
        let grid = p.grid(3).unwrap();
        let mc = McParams::new(100, 1e-2, 1).unwrap();
        let params = VerifyParams {
            parabolic: ParabolicParams::new(mc, 1),
            slice: 0.5,
            elliptic: EllipticParams::new(mc, 2.0),
            bound: BoundParams::new(mc, mc, 2.0),
            budget: Some(0.0),
        };
        let report = verify_convergence(&p, &[0.5, 1.0, 1.5, 2.0], &grid, &params).unwrap();
        assert!(report.all_pass());
        assert!(matches!(
            fit_decay(&report, DecayModel::Power, DecaySeries::Bound),
            Err(LabError::InsufficientSignal(_))
        ));
        assert!(verify_convergence(&p, &[0.3], &grid, &params).is_err());
    }
}
