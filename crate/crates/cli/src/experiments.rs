//! The named experiments. Each returns a results table, optional report and
//! extra files, a list of failed assertions and a summary of key numbers.

use std::sync::Arc;

use serde_json::{json, Map, Value};

use fklab_core::asymptotics::{
    bound_rhs_grid, fit_decay, fit_series, potential_field, verify_convergence, BoundParams, DecayModel, DecaySeries,
    GapReport, VerifyParams,
};
use fklab_core::feynman_kac::{potential_grid, semigroup_apply, spectral_oracle_interval, SpectralKind};
use fklab_core::process::{estimate_mean_exit_time, shift_law_check};
use fklab_core::reference::{
    fd_elliptic, fd_parabolic, fractional_elliptic, stable_exit_time_interval, FdBoundary, FdGrid, FdPicard, FdProblem,
    NeumannConvention,
};
use fklab_core::solver::{
    apriori_check, solve_elliptic, solve_parabolic, truncation_gap, BoundCheck, EllipticParams, ParabolicParams,
};
use fklab_core::transforms::{build_transform, push_solution, s_max_bound};
use fklab_core::{
    revuz_check, CoefFn, Coefficients, GridFunction, LabError, McParams, ProblemSpec, SignNonlinearity,
    SmoothMeasure, SpatialFn,
};

use crate::config::{Checks, Experiment, MeasureConfig, ModelName, Numerics, Problem, SeriesName};
use crate::CliError;

/// A CSV table with a fixed header.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn from_csv(text: &str) -> Self {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Self { header, rows }
    }
}

#[derive(Debug, Default)]
pub struct ExperimentOutput {
    pub table: Table,
    pub report: Option<Value>,
    /// Additional files written next to `results.csv`.
    pub extra: Vec<(String, String)>,
    pub failures: Vec<String>,
    pub summary: Map<String, Value>,
}

pub(crate) struct Ctx<'a> {
    pub seed: u64,
    pub problem: Problem,
    pub n: &'a Numerics,
    pub c: &'a Checks,
}

fn run_err(e: LabError) -> CliError {
    CliError::Run(e.to_string())
}

fn schema_err(e: LabError) -> CliError {
    CliError::Schema(e.to_string())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn coord_header(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".into()]
    } else {
        (1..=dim).map(|i| format!("x_{i}")).collect()
    }
}

fn coords(x: &[f64]) -> Vec<String> {
    x.iter().map(|&v| num(v)).collect()
}

impl Ctx<'_> {
    fn spec(&self) -> &ProblemSpec<f64> {
        &self.problem.spec
    }

    fn dim(&self) -> usize {
        self.spec().process.dim()
    }

    fn mc(&self, paths: usize, dt: f64) -> Result<McParams<f64>, CliError> {
        McParams::new(self.n.n_paths.unwrap_or(paths), self.n.dt.unwrap_or(dt), self.seed).map_err(schema_err)
    }

    fn check_mc(&self, mc: McParams<f64>) -> McParams<f64> {
        mc.with_paths(self.n.check_paths.unwrap_or(mc.n_paths))
    }

    fn grid(&self, points: usize) -> Result<GridFunction<f64>, CliError> {
        self.spec().grid(self.n.grid_points.unwrap_or(points)).map_err(schema_err)
    }

    fn k(&self) -> f64 {
        self.c.se_factor.unwrap_or(3.0)
    }

    /// `|value - oracle| ≤ k·se + rel_tol·|oracle| + abs_tol`.
    fn within(&self, value: f64, se: f64, oracle: f64, rel: f64, abs: f64) -> bool {
        let rel = self.c.rel_tol.unwrap_or(rel);
        let abs = self.c.abs_tol.unwrap_or(abs);
        (value - oracle).abs() <= self.k() * se + rel * oracle.abs() + abs
    }

    fn parabolic_params(&self, mc: McParams<f64>, n_time: usize) -> ParabolicParams<f64> {
        let mut p = ParabolicParams::new(mc, self.n.n_time.unwrap_or(n_time));
        if let Some(s) = self.n.picard_sweeps {
            p.picard_sweeps = s;
        }
        p
    }

    fn elliptic_params(&self, mc: McParams<f64>, horizon: f64) -> EllipticParams<f64> {
        let mut p = EllipticParams::new(mc, self.n.horizon.unwrap_or(horizon));
        if let Some(s) = self.n.max_sweeps {
            p.max_sweeps = s;
        }
        if let Some(t) = self.n.tol_floor {
            p.tol_floor = t;
        }
        p
    }

    /// Interval endpoints when the process is killed Brownian motion on an interval.
    fn brownian_interval(&self) -> Option<(f64, f64)> {
        if self.problem.is_killed_brownian() {
            self.problem.interval
        } else {
            None
        }
    }

    fn slices(&self, t_final: f64, default_slice: f64, times: &[f64]) -> Result<usize, CliError> {
        let slice = self.n.slice.unwrap_or(default_slice);
        if !(slice > 0.0) {
            return Err(CliError::Schema("numerics.slice must be positive".into()));
        }
        for &t in times.iter().chain([t_final].iter()) {
            let k = (t / slice).round();
            if k < 1.0 || (k * slice - t).abs() > 1e-9 * t.max(1.0) {
                return Err(CliError::Schema(format!("time {t} is not a positive multiple of numerics.slice = {slice}")));
            }
        }
        Ok((t_final / slice).round() as usize)
    }
}

pub(crate) fn run(experiment: Experiment, ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    match experiment {
        Experiment::ExitTime => exit_time(ctx),
        Experiment::Semigroup => semigroup(ctx),
        Experiment::Potential => potential(ctx),
        Experiment::Revuz => revuz(ctx),
        Experiment::ShiftLaw => shift_law(ctx),
        Experiment::SolveParabolic => parabolic(ctx),
        Experiment::SolveElliptic => elliptic(ctx),
        Experiment::TruncationGap => truncation(ctx),
        Experiment::Apriori => apriori(ctx),
        Experiment::TransformCheck => transform_check(ctx),
        Experiment::VerifyConvergence => verify(ctx),
        Experiment::FitDecay => fit(ctx),
        Experiment::OracleCompare => oracle_compare(ctx),
    }
}

fn exit_time(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let mc = ctx.mc(10_000, 1e-3)?;
    let horizon = ctx.n.horizon.unwrap_or(20.0);
    let x0 = &ctx.problem.x0;
    let est = estimate_mean_exit_time(&ctx.spec().process, x0, mc, horizon).map_err(run_err)?;
    let mut header = coord_header(ctx.dim());
    header.extend(["mean", "std_error", "n_paths", "dt", "horizon", "warning"].map(String::from));
    let mut table = Table::new(&header);
    let mut row = coords(x0);
    row.extend([
        num(est.mean),
        num(est.std_error),
        est.n_paths.to_string(),
        num(mc.dt),
        num(horizon),
        est.warnings.join("; ").replace(',', ";"),
    ]);
    table.push(row);
    let mut out = ExperimentOutput { table, ..Default::default() };
    out.summary.insert("mean".into(), json!(est.mean));
    out.summary.insert("std_error".into(), json!(est.std_error));
    if let Some(target) = ctx.c.target {
        let tol = (ctx.k() * est.std_error).max(ctx.c.abs_tol.unwrap_or(0.0));
        out.summary.insert("tolerance".into(), json!(tol));
        if (est.mean - target).abs() > tol {
            out.failures.push(format!("mean exit time {} differs from {target} by more than {tol}", est.mean));
        }
    }
    Ok(out)
}

fn semigroup(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let mc = ctx.mc(10_000, 1e-3)?;
    let times = ctx.n.times.clone().unwrap_or_else(|| vec![ctx.n.t_final.unwrap_or(0.2)]);
    let x0 = &ctx.problem.x0;
    let phi = ctx.spec().coefficients.phi.clone();
    let lambda = ctx.spec().process.killing_rate;
    let mut table = Table::new(&["t", "mean", "std_error", "oracle", "abs_diff", "pass"]);
    let mut out = ExperimentOutput::default();
    for &t in &times {
        let est = semigroup_apply(&ctx.spec().process, &phi, t, x0, mc).map_err(run_err)?;
        let oracle = match ctx.brownian_interval() {
            Some(iv) => Some(
                spectral_oracle_interval(iv, SpectralKind::Semigroup { t }, &|y| phi.eval(&[y]), x0[0], lambda)
                    .map_err(run_err)?,
            ),
            None => None,
        };
        let pass = oracle.is_none_or(|o| ctx.within(est.mean, est.std_error, o, 0.02, 0.0));
        if !pass {
            out.failures.push(format!("t = {t}: P_t φ = {} ± {} vs oracle {:?}", est.mean, est.std_error, oracle));
        }
        table.push(vec![
            num(t),
            num(est.mean),
            num(est.std_error),
            oracle.map(num).unwrap_or_default(),
            oracle.map(|o| num((est.mean - o).abs())).unwrap_or_default(),
            pass.to_string(),
        ]);
    }
    out.table = table;
    Ok(out)
}

fn weight_at_zero(c: &CoefFn<f64>) -> SpatialFn<f64> {
    match c {
        CoefFn::Const(v) => SpatialFn::constant(*v),
        other => {
            let g = other.clone();
            SpatialFn::new(format!("{}(x,0)", other.name()), move |x| g.eval(x, 0.0))
        }
    }
}

fn potential(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let mc = ctx.mc(10_000, 1e-3)?;
    let alpha = ctx.n.alpha.unwrap_or(0.0);
    let horizon = ctx.n.horizon.unwrap_or(20.0);
    let grid = ctx.grid(11)?;
    let spec = ctx.spec();
    let weight = weight_at_zero(&spec.coefficients.g);
    let est = potential_grid(&spec.process, &spec.measure, &weight, alpha, &grid, mc, horizon).map_err(run_err)?;
    let mut header = coord_header(ctx.dim());
    header.extend(["value", "std_error", "oracle", "pass"].map(String::from));
    let mut table = Table::new(&header);
    let mut out = ExperimentOutput::default();
    let oracle_fn = ctx.brownian_interval().filter(|_| !spec.measure.is_surface());
    let mut sup_err = 0.0f64;
    for p in 0..grid.len() {
        let x = grid.point(p);
        let (v, se) = (est.values[p], est.std_error(p));
        let oracle = match oracle_fn {
            Some(iv) => {
                let rho = |y: f64| spec.measure.density(&[y]) * weight.eval(&[y]);
                Some(
                    spectral_oracle_interval(iv, SpectralKind::Potential { alpha }, &rho, x[0], spec.process.killing_rate)
                        .map_err(run_err)?,
                )
            }
            None => None,
        };
        let pass = oracle.is_none_or(|o| ctx.within(v, se, o, 0.02, 0.0));
        if let Some(o) = oracle {
            sup_err = sup_err.max((v - o).abs());
        }
        if !pass {
            out.failures.push(format!("x = {x:?}: potential {v} ± {se} vs oracle {oracle:?}"));
        }
        let mut row = coords(&x);
        row.extend([num(v), num(se), oracle.map(num).unwrap_or_default(), pass.to_string()]);
        table.push(row);
    }
    if oracle_fn.is_some() {
        out.summary.insert("sup_error".into(), json!(sup_err));
    }
    out.table = table;
    Ok(out)
}

fn revuz(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let mc = ctx.mc(10_000, 1e-3)?;
    let mut alphas = ctx.n.alphas.clone().unwrap_or_else(|| vec![10.0, 100.0]);
    alphas.sort_by(f64::total_cmp);
    let spec = ctx.spec();
    let rows = revuz_check(&spec.process, &spec.measure, &alphas, mc).map_err(run_err)?;
    let mut table = Table::new(&["alpha", "estimate", "std_error", "total_mass", "rel_error", "oracle"]);
    let mut out = ExperimentOutput::default();
    let oracle_on = ctx.problem.interval.filter(|_| ctx.problem.is_killed_brownian() && !spec.measure.is_surface());
    let k = ctx.k();
    for (i, r) in rows.iter().enumerate() {
        let (est, se, mass) = (r.estimate.mean, r.estimate.std_error, r.total_mass);
        let rel = if mass != 0.0 { (est - mass).abs() / mass.abs() } else { (est - mass).abs() };
        let oracle = match oracle_on {
            Some((a, b)) => {
                let beta = |y: f64| spec.measure.density(&[y]);
                let inner = |x: f64| {
                    spectral_oracle_interval((a, b), SpectralKind::Potential { alpha: r.alpha }, &beta, x, 0.0)
                        .unwrap_or(f64::NAN)
                };
                Some(r.alpha * fklab_core::feynman_kac::adaptive_simpson(&inner, a, b, 1e-7).map_err(run_err)?)
            }
            None => None,
        };
        table.push(vec![num(r.alpha), num(est), num(se), num(mass), num(rel), oracle.map(num).unwrap_or_default()]);
        if i > 0 {
            let prev = &rows[i - 1];
            let prev_dist = (prev.estimate.mean - mass).abs();
            if (est - mass).abs() > prev_dist + k * (se + prev.estimate.std_error) {
                out.failures.push(format!(
                    "alpha = {}: entry {est} is farther from {mass} than the alpha = {} entry {}",
                    r.alpha, prev.alpha, prev.estimate.mean
                ));
            }
        }
    }
    let last = rows.last().expect("at least one rate");
    let last_rel = (last.estimate.mean - last.total_mass).abs() / last.total_mass.abs().max(f64::MIN_POSITIVE);
    out.summary.insert("largest_alpha_rel_error".into(), json!(last_rel));
    out.summary.insert("largest_alpha_estimate".into(), json!(last.estimate.mean));
    if let Some(tol) = ctx.c.rel_tol {
        if last_rel > tol {
            out.failures.push(format!(
                "alpha = {}: estimate {} is {:.4} relative to the mass {}, above {tol}",
                last.alpha, last.estimate.mean, last_rel, last.total_mass
            ));
        }
    }
    out.table = table;
    Ok(out)
}

fn shift_law(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let mc = ctx.mc(10_000, 1e-3)?;
    let s = ctx.n.shift_s.unwrap_or(1.0);
    let t = ctx.n.shift_t.unwrap_or(0.5);
    let spec = ctx.spec();
    let r = shift_law_check(&spec.process, &spec.measure, &ctx.problem.x0, s, t, mc).map_err(run_err)?;
    let mut table = Table::new(&["s", "t", "statistic", "critical_value_1pct", "n_paths", "pass"]);
    table.push(vec![num(s), num(t), num(r.statistic), num(r.critical_value), r.n_paths.to_string(), r.passed().to_string()]);
    let mut out = ExperimentOutput { table, ..Default::default() };
    out.summary.insert("statistic".into(), json!(r.statistic));
    out.summary.insert("critical_value".into(), json!(r.critical_value));
    if !r.passed() {
        out.failures.push(format!("KS statistic {} is not below {}", r.statistic, r.critical_value));
    }
    Ok(out)
}

fn parabolic(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let mc = ctx.mc(2000, 1e-3)?;
    let t_final = ctx.n.t_final.unwrap_or(0.5);
    let grid = ctx.grid(21)?;
    let params = ctx.parabolic_params(mc, 10);
    let sol = solve_parabolic(ctx.spec(), t_final, &grid, &params).map_err(run_err)?;
    let mut buf = Vec::new();
    sol.solution.write_csv(&mut buf).map_err(|e| CliError::Run(e.to_string()))?;
    let mut out = ExperimentOutput { table: Table::from_csv(&String::from_utf8_lossy(&buf)), ..Default::default() };
    let last = sol.solution.last();
    if last.values.iter().any(|v| !v.is_finite()) {
        out.failures.push("non-finite solution values".into());
    }
    let sweeps: Vec<f64> = sol.sweep_changes.last().cloned().unwrap_or_default();
    out.summary.insert("last_slice_sweep_changes".into(), json!(sweeps));
    out.summary.insert("sup_abs".into(), json!(last.sup_abs()));
    out.summary.insert("normalization".into(), json!(sol.normalization));
    Ok(out)
}

fn fd_grid(ctx: &Ctx<'_>, (a, b): (f64, f64), dt: Option<f64>) -> Result<FdGrid, CliError> {
    let cells = ctx.n.fd_cells.unwrap_or(400);
    let h = (b - a) / cells as f64;
    let boundary = if ctx.spec().process.is_reflected() {
        FdBoundary::NeumannFlux { convention: NeumannConvention::Half }
    } else {
        FdBoundary::Dirichlet0
    };
    FdGrid::new(a, b, cells, ctx.n.fd_dt.or(dt).unwrap_or(h), boundary).map_err(schema_err)
}

fn fd_problem(spec: &ProblemSpec<f64>) -> FdProblem {
    let c = &spec.coefficients;
    FdProblem::new(c.f.clone(), c.g.clone(), spec.measure.clone(), c.phi.clone()).with_lambda(spec.process.killing_rate)
}

fn elliptic(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let mc = ctx.mc(2000, 1e-3)?;
    let grid = ctx.grid(21)?;
    let params = ctx.elliptic_params(mc, 10.0);
    let base = ctx.spec();
    let bandwidths = ctx.n.bandwidths.clone();
    let point = match &ctx.problem.config.measure {
        Some(MeasureConfig::Point { center, mass, .. }) => Some((center.clone(), *mass)),
        _ => None,
    };
    let runs: Vec<Option<f64>> = match &bandwidths {
        Some(bw) => {
            if point.is_none() {
                return Err(CliError::Schema("numerics.bandwidths needs a point measure".into()));
            }
            let mut bw = bw.clone();
            bw.sort_by(|a, b| b.total_cmp(a));
            bw.into_iter().map(Some).collect()
        }
        None => vec![None],
    };
    // Brownian motion on an interval (killed or reflected) has an FD oracle.
    let interval = ctx.problem.interval.filter(|_| !matches!(base.process.kind, fklab_core::ProcessKind::KilledStable { .. }));
    let mut header = vec!["bandwidth".to_string()];
    header.extend(coord_header(ctx.dim()));
    header.extend(["value", "std_error", "oracle", "abs_error"].map(String::from));
    let mut table = Table::new(&header);
    let mut out = ExperimentOutput::default();
    let mut errors = Vec::new();
    for bw in &runs {
        let problem = match (bw, &point) {
            (Some(bw), Some((center, mass))) => {
                let m = SmoothMeasure::mollified_point(center.clone(), *mass, *bw).map_err(schema_err)?;
                ProblemSpec::new(base.process.clone(), base.coefficients.clone(), m).map_err(schema_err)?
            }
            _ => base.clone(),
        };
        let sol = solve_elliptic(&problem, &grid, &params).map_err(run_err)?;
        let oracle = match interval {
            Some(iv) => {
                let mut fp = fd_problem(&problem);
                if bw.is_some() {
                    fp = fp.with_exact_point();
                }
                Some(fd_elliptic(&fp, &fd_grid(ctx, iv, None)?, FdPicard::default()).map_err(run_err)?)
            }
            None => None,
        };
        let mut sup = 0.0f64;
        for p in 0..grid.len() {
            let x = grid.point(p);
            let v = sol.solution.values[p];
            let o = oracle.as_ref().map(|o| o.at(x[0]));
            if let Some(o) = o {
                sup = sup.max((v - o).abs());
            }
            let mut row = vec![bw.map(num).unwrap_or_default()];
            row.extend(coords(&x));
            row.extend([
                num(v),
                num(sol.solution.std_error(p)),
                o.map(num).unwrap_or_default(),
                o.map(|o| num((v - o).abs())).unwrap_or_default(),
            ]);
            table.push(row);
        }
        out.summary.insert(
            bw.map_or("trace".to_string(), |b| format!("trace_bandwidth_{b}")),
            json!(sol.trace),
        );
        if oracle.is_some() {
            errors.push((*bw, sup));
        }
    }
    out.summary.insert(
        "sup_errors".into(),
        json!(errors.iter().map(|(b, e)| json!({"bandwidth": b, "sup_error": e})).collect::<Vec<_>>()),
    );
    for w in errors.windows(2) {
        if !(w[1].1 < w[0].1) {
            out.failures.push(format!(
                "sup error did not decrease from bandwidth {:?} ({}) to {:?} ({})",
                w[0].0, w[0].1, w[1].0, w[1].1
            ));
        }
    }
    if let (Some(tol), Some(&(bw, e))) = (ctx.c.max_sup_error, errors.last()) {
        if e > tol {
            out.failures.push(format!("sup error {e} at bandwidth {bw:?} exceeds {tol}"));
        }
    }
    out.table = table;
    Ok(out)
}

fn bound_table(check: &BoundCheck<f64>, dim: usize, k: f64, extra: &[(&str, Vec<String>)]) -> (Table, Vec<String>) {
    let mut header = coord_header(dim);
    header.extend(["lhs", "rhs", "se", "pass"].map(String::from));
    header.extend(extra.iter().map(|(h, _)| h.to_string()));
    let mut table = Table::new(&header);
    let mut failures = Vec::new();
    for (p, pt) in check.points.iter().enumerate() {
        let pass = pt.holds(k);
        if !pass {
            failures.push(format!("x = {:?}: lhs {} > rhs {} + {k}·se {}", pt.x, pt.lhs, pt.rhs, pt.se));
        }
        let mut row = coords(&pt.x);
        row.extend([num(pt.lhs), num(pt.rhs), num(pt.se), pass.to_string()]);
        row.extend(extra.iter().map(|(_, col)| col[p].clone()));
        table.push(row);
    }
    (table, failures)
}

fn truncation(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let mc = ctx.mc(2000, 1e-3)?;
    let n = ctx.n.n.unwrap_or(0.5);
    let m = ctx.n.m.unwrap_or(2.0);
    if !(0.0 < n && n < m) {
        return Err(CliError::Schema(format!("truncation gap needs 0 < n < m, got n = {n}, m = {m}")));
    }
    let n_time = ctx.slices(m, 0.05, &[n])?;
    let grid = ctx.grid(11)?;
    let mut params = ctx.parabolic_params(mc, n_time);
    params.n_time = n_time;
    let spec = ctx.spec();
    let sol = solve_parabolic(spec, m, &grid, &params).map_err(run_err)?;
    let check = truncation_gap(spec, &sol.solution, n, m, ctx.check_mc(mc)).map_err(run_err)?;
    let c = &spec.coefficients;
    let g0_free = c.g.is_zero() || spec.measure.is_zero();
    let oracle: Option<Vec<f64>> = match ctx.brownian_interval().filter(|_| g0_free) {
        Some(iv) => {
            let lambda = spec.process.killing_rate;
            let phi = |y: f64| c.phi.eval(&[y]).abs();
            let f0 = |y: f64| c.f.eval(&[y], 0.0).abs();
            let mut v = Vec::new();
            for pt in &check.points {
                let x = pt.x[0];
                let a = spectral_oracle_interval(iv, SpectralKind::Semigroup { t: n }, &phi, x, lambda);
                let b = spectral_oracle_interval(iv, SpectralKind::Semigroup { t: m }, &phi, x, lambda);
                let i = spectral_oracle_interval(iv, SpectralKind::TimeIntegral { from: n, to: m }, &f0, x, lambda);
                v.push(a.map_err(run_err)? + b.map_err(run_err)? + i.map_err(run_err)?);
            }
            Some(v)
        }
        None => None,
    };
    let k = ctx.k();
    let mut extra = Vec::new();
    let mut oracle_failures = Vec::new();
    if let Some(o) = &oracle {
        let mut col = Vec::new();
        let mut rel = Vec::new();
        let mut sup_rel = 0.0f64;
        for (pt, &ov) in check.points.iter().zip(o) {
            col.push(num(ov));
            let r = if ov > 0.0 { (pt.rhs - ov).abs() / ov } else { 0.0 };
            sup_rel = sup_rel.max(r);
            rel.push(num(r));
            if !ctx.within(pt.rhs, pt.rhs_se, ov, 0.02, 0.0) {
                oracle_failures.push(format!("x = {:?}: tail estimate {} vs spectral oracle {ov}", pt.x, pt.rhs));
            }
        }
        extra.push(("rhs_se", check.points.iter().map(|p| num(p.rhs_se)).collect()));
        extra.push(("rhs_oracle", col));
        extra.push(("rhs_rel_diff", rel));
        let _ = sup_rel;
    }
    let (table, mut failures) = bound_table(&check, ctx.dim(), k, &extra);
    failures.extend(oracle_failures);
    let mut out = ExperimentOutput { table, failures, ..Default::default() };
    out.summary.insert("sup_lhs".into(), json!(check.sup_lhs()));
    if let Some(o) = &oracle {
        let sup_rel = check
            .points
            .iter()
            .zip(o)
            .filter(|(_, &ov)| ov > 0.0)
            .map(|(pt, &ov)| (pt.rhs - ov).abs() / ov)
            .fold(0.0f64, f64::max);
        out.summary.insert("rhs_oracle_sup_rel_diff".into(), json!(sup_rel));
    }
    Ok(out)
}

fn apriori(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let mc = ctx.mc(2000, 1e-3)?;
    let t_final = ctx.n.t_final.unwrap_or(1.0);
    let grid = ctx.grid(11)?;
    let params = ctx.parabolic_params(mc, 10);
    let spec = ctx.spec();
    let sol = solve_parabolic(spec, t_final, &grid, &params).map_err(run_err)?;
    let check = apriori_check(spec, &sol.solution, t_final, ctx.check_mc(mc)).map_err(run_err)?;
    let (table, failures) = bound_table(&check, ctx.dim(), ctx.k(), &[]);
    let mut out = ExperimentOutput { table, failures, ..Default::default() };
    out.summary.insert("sup_lhs".into(), json!(check.sup_lhs()));
    Ok(out)
}

fn sign_nonlinearity(ctx: &Ctx<'_>) -> Result<SignNonlinearity, CliError> {
    let Some(h) = &ctx.problem.h else {
        return Err(CliError::Schema("problem.h is required".into()));
    };
    let f = h.of_y().map_err(|e| CliError::Schema(format!("problem.h: {e}")))?;
    SignNonlinearity::new(h.source(), f, ctx.n.probe_max.unwrap_or(8.0)).map_err(schema_err)
}

fn transform_check(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let h = sign_nonlinearity(ctx)?;
    let s_max = ctx.n.s_max.unwrap_or(4.0);
    let quad_tol = ctx.n.quad_tol.unwrap_or(1e-8);
    let probe = ctx.n.probe_max.unwrap_or(3.0).min(s_max);
    let tr = build_transform(&h, s_max, quad_tol).map_err(run_err)?;
    let mut table = Table::new(&["s", "G", "Phi", "Phi_inv_of_Phi", "round_trip_error", "H"]);
    let mut out = ExperimentOutput::default();
    let n = 121;
    let mut worst = 0.0f64;
    for i in 0..n {
        let s = -probe + 2.0 * probe * i as f64 / (n - 1) as f64;
        let g = tr.g(s).map_err(run_err)?;
        let w = tr.phi(s).map_err(run_err)?;
        let back = tr.phi_inv(w).map_err(run_err)?;
        let hv = tr.h_of(w).map_err(run_err)?;
        let err = (back - s).abs();
        worst = worst.max(err);
        if err > 2.0 * quad_tol {
            out.failures.push(format!("round trip at s = {s}: error {err} > 2·quad_tol"));
        }
        if !(hv > 0.0 && hv <= 1.0) {
            out.failures.push(format!("H(Φ({s})) = {hv} outside (0, 1]"));
        }
        table.push(vec![num(s), num(g), num(w), num(back), num(err), num(hv)]);
    }
    let h0 = tr.h_of(0.0).map_err(run_err)?;
    if (h0 - 1.0).abs() > quad_tol {
        out.failures.push(format!("H(0) = {h0}"));
    }
    // H peaks at w = 0; monotone on the nonnegative half of the range
    let (_, hi) = tr.phi_range();
    let mut prev = f64::INFINITY;
    for i in 0..=512 {
        let w = hi * i as f64 / 512.0;
        let hv = tr.h_extended(w);
        if hv > prev + quad_tol {
            out.failures.push(format!("H increases at w = {w}"));
            break;
        }
        prev = hv;
    }
    let mut fwd = Vec::new();
    tr.write_forward_csv(&mut fwd).map_err(|e| CliError::Run(e.to_string()))?;
    let mut inv = Vec::new();
    tr.write_inverse_csv(201, &mut inv).map_err(|e| CliError::Run(e.to_string()))?;
    out.extra.push(("forward.csv".into(), String::from_utf8_lossy(&fwd).into_owned()));
    out.extra.push(("inverse.csv".into(), String::from_utf8_lossy(&inv).into_owned()));
    let (lo, hi) = tr.phi_range();
    out.summary.insert("phi_range".into(), json!([lo, hi]));
    out.summary.insert("max_round_trip_error".into(), json!(worst));
    out.table = table;
    Ok(out)
}

fn bound_params(ctx: &Ctx<'_>, mc: McParams<f64>, horizon: f64) -> BoundParams<f64> {
    let psi = mc.with_paths(ctx.n.psi_paths.unwrap_or(mc.n_paths));
    BoundParams::new(ctx.check_mc(mc), psi, ctx.n.horizon.unwrap_or(horizon))
}

fn verify_report(ctx: &Ctx<'_>, default_times: &[f64]) -> Result<GapReport<f64>, CliError> {
    let mc = ctx.mc(2000, 1e-3)?;
    let times = ctx.n.times.clone().unwrap_or_else(|| default_times.to_vec());
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let n_time = ctx.slices(t_max, 0.05, &times)?;
    let grid = ctx.grid(11)?;
    let params = VerifyParams {
        parabolic: ctx.parabolic_params(mc, n_time),
        slice: t_max / n_time as f64,
        elliptic: ctx.elliptic_params(mc, 10.0),
        bound: bound_params(ctx, mc, 10.0),
        budget: ctx.n.budget,
    };
    verify_convergence(ctx.spec(), &times, &grid, &params).map_err(run_err)
}

fn report_output(ctx: &Ctx<'_>, report: &GapReport<f64>) -> Result<ExperimentOutput, CliError> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(|e| CliError::Run(e.to_string()))?;
    let mut out = ExperimentOutput {
        table: Table::from_csv(&String::from_utf8_lossy(&buf)),
        report: Some(serde_json::to_value(report).map_err(|e| CliError::Run(e.to_string()))?),
        ..Default::default()
    };
    for r in report.rows.iter().filter(|r| !r.pass) {
        out.failures.push(format!(
            "t = {}, x = {:?}: gap {} > rhs {} + slack {}",
            r.t, r.x, r.gap, r.rhs, r.slack
        ));
    }
    out.summary.insert("all_pass".into(), json!(report.all_pass()));
    out.summary.insert("budget".into(), json!(report.budget));
    out.summary.insert("margins".into(), json!(report.margins));
    let _ = ctx;
    Ok(out)
}

fn verify(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let report = verify_report(ctx, &[0.25, 0.5, 1.0, 2.0])?;
    let mut out = report_output(ctx, &report)?;
    if let Some(fit) = &report.fitted_rate {
        out.summary.insert("fitted_rate".into(), json!(fit));
    }
    if let Some(max) = ctx.c.max_slope {
        match &report.fitted_rate {
            Some(fit) if fit.exponent <= max => {}
            Some(fit) => out.failures.push(format!("fitted bound slope {} exceeds {max}", fit.exponent)),
            None => out.failures.push("bound sequence too close to the noise floor to fit".into()),
        }
    }
    Ok(out)
}

fn model(ctx: &Ctx<'_>) -> DecayModel {
    match ctx.n.model.unwrap_or(ModelName::Power) {
        ModelName::Power => DecayModel::Power,
        ModelName::Exponential => DecayModel::Exponential,
    }
}

fn fit(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let series = ctx.n.series.unwrap_or(SeriesName::Bound);
    let mut out;
    let fitted = match series {
        SeriesName::Gap => {
            let report = verify_report(ctx, &[0.25, 0.5, 0.75, 1.0])?;
            out = report_output(ctx, &report)?;
            fit_decay(&report, model(ctx), DecaySeries::Gap)
        }
        SeriesName::Bound => {
            out = ExperimentOutput::default();
            fit_bound(ctx, &mut out)?
        }
    };
    match fitted {
        Ok(fit) => {
            out.summary.insert("exponent".into(), json!(fit.exponent));
            out.summary.insert("r_squared".into(), json!(fit.r_squared));
            out.summary.insert("fit".into(), json!(fit));
            if let Some(max) = ctx.c.max_slope {
                if fit.exponent > max {
                    out.failures.push(format!("fitted slope {} exceeds {max}", fit.exponent));
                }
            }
        }
        Err(e) => out.failures.push(e.to_string()),
    }
    Ok(out)
}

/// Bound-side decay: `sup_x rhs(t, x)` over the time grid, with the killing
/// factorization checked exactly at every point.
fn fit_bound(ctx: &Ctx<'_>, out: &mut ExperimentOutput) -> Result<fklab_core::Result<fklab_core::asymptotics::DecayFit>, CliError> {
    let mc = ctx.mc(4000, 1e-3)?;
    let times = ctx.n.times.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0, 4.0]);
    if times.is_empty() || times.windows(2).any(|w| !(w[0] < w[1])) || !(times[0] > 0.0) {
        return Err(CliError::Schema("numerics.times must be positive and increasing".into()));
    }
    let grid = ctx.grid(11)?;
    let spec = ctx.spec();
    let bp = bound_params(ctx, mc, 20.0);
    let psi = potential_field(spec, &grid, &bp).map_err(run_err)?;
    let lambda = spec.process.killing_rate;
    let mut table = Table::new(&["t", "sup_rhs", "sup_inner", "noise", "factorization_exact"]);
    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    let mut all_exact = true;
    for &t in &times {
        let b = bound_rhs_grid(spec, t, &psi, &grid, &bp).map_err(run_err)?;
        let w = (-lambda * t).exp();
        let exact = b.rhs.values.iter().zip(&b.inner.values).all(|(&r, &i)| r == i * w);
        all_exact &= exact;
        if !exact {
            out.failures.push(format!("t = {t}: rhs is not exactly e^(-λt) times the inner value"));
        }
        let sup = b.rhs.sup_abs();
        let argmax = (0..grid.len()).max_by(|&i, &j| b.rhs.values[i].abs().total_cmp(&b.rhs.values[j].abs()));
        let noise = argmax.map_or(0.0, |p| b.rhs.std_error(p));
        if sup > 5.0 * noise && sup > 0.0 {
            ts.push(t);
            ys.push(sup);
        }
        table.push(vec![num(t), num(sup), num(b.inner.sup_abs()), num(noise), exact.to_string()]);
    }
    out.summary.insert("factorization_exact".into(), json!(all_exact));
    if let Some(cross) = fractional_cross_check(ctx, &psi)? {
        out.summary.insert("psi_oracle".into(), cross.clone());
        if let (Some(tol), Some(rel)) = (ctx.c.rel_tol, cross["sup_rel_diff_beyond_se"].as_f64()) {
            if rel > tol {
                out.failures.push(format!(
                    "potential vs fractional oracle: relative difference beyond {}·SE is {rel}, above {tol}",
                    ctx.k()
                ));
            }
        }
    }
    out.table = table;
    if ts.len() < 4 {
        return Ok(Err(LabError::InsufficientSignal(format!(
            "{} of {} times lie above five times the noise floor; at least 4 are needed",
            ts.len(),
            times.len()
        ))));
    }
    let m = model(ctx);
    Ok(fit_series(&ts, &ys, m).map(|(exponent, intercept, r_squared)| fklab_core::asymptotics::DecayFit {
        model: m,
        series: DecaySeries::Bound,
        exponent,
        intercept,
        r_squared,
        n_points: ts.len(),
        flagged: false,
    }))
}

/// Compares `Ψ = R_0|f(·,0)|` with the deterministic fractional solve for the
/// stable process on an interval.
fn fractional_cross_check(ctx: &Ctx<'_>, psi: &GridFunction<f64>) -> Result<Option<Value>, CliError> {
    let spec = ctx.spec();
    let (fklab_core::ProcessKind::KilledStable { index }, Some(iv)) = (spec.process.kind.clone(), ctx.problem.interval) else {
        return Ok(None);
    };
    if spec.process.killing_rate != 0.0 || !(spec.coefficients.g.is_zero() || spec.measure.is_zero()) {
        return Ok(None);
    }
    let f = &spec.coefficients.f;
    let rhs = |y: f64| f.eval(&[y], 0.0).abs();
    let sol = fractional_elliptic(index, iv, &rhs, ctx.n.fd_cells.unwrap_or(400)).map_err(run_err)?;
    let oracle: Vec<f64> = (0..psi.len()).map(|p| sol.at(psi.point(p)[0])).collect();
    let sup_ref = oracle.iter().fold(0.0f64, |m, o| m.max(o.abs()));
    let mut sup_diff = 0.0f64;
    let mut worst_excess = f64::NEG_INFINITY;
    for (p, &o) in oracle.iter().enumerate() {
        let d = (psi.values[p] - o).abs();
        sup_diff = sup_diff.max(d);
        worst_excess = worst_excess.max(d - ctx.k() * psi.std_error(p));
    }
    let rel = |v: f64| if sup_ref > 0.0 { v / sup_ref } else { 0.0 };
    Ok(Some(json!({
        "sup_abs_diff": sup_diff,
        "sup_rel_diff": rel(sup_diff),
        "sup_rel_diff_beyond_se": rel(worst_excess.max(0.0)),
        "warnings": sol.warnings,
    })))
}

fn oracle_compare(ctx: &Ctx<'_>) -> Result<ExperimentOutput, CliError> {
    let spec = ctx.spec();
    if let fklab_core::ProcessKind::KilledStable { index } = spec.process.kind {
        return stable_exit_compare(ctx, index);
    }
    let Some(iv) = ctx.problem.interval else {
        return Err(CliError::Schema("oracle-compare needs a one-dimensional interval".into()));
    };
    if ctx.problem.h.is_some() {
        return transform_compare(ctx, iv);
    }
    let mc = ctx.mc(2000, 1e-3)?;
    let t_final = ctx.n.t_final.unwrap_or(0.5);
    let grid = ctx.grid(21)?;
    let params = ctx.parabolic_params(mc, 10);
    let sol = solve_parabolic(spec, t_final, &grid, &params).map_err(run_err)?;
    let fd = fd_parabolic(&fd_problem(spec), t_final, &fd_grid(ctx, iv, Some(1e-3))?).map_err(run_err)?;
    let u = sol.solution.last();
    let values: Vec<(f64, f64, f64, f64)> =
        (0..u.len()).map(|p| { let x = u.point(p)[0]; (x, u.values[p], u.std_error(p), fd.at(x)) }).collect();
    let mut out = compare_rows(ctx, &values, &["x", "mc", "std_error", "fd", "abs_diff"]);
    out.summary.insert("fd_richardson_error".into(), json!(fd.richardson_error));
    Ok(out)
}

fn compare_rows(ctx: &Ctx<'_>, values: &[(f64, f64, f64, f64)], header: &[&str]) -> ExperimentOutput {
    let mut table = Table::new(header);
    let mut out = ExperimentOutput::default();
    let mut sup = 0.0f64;
    for &(x, v, se, o) in values {
        let d = (v - o).abs();
        sup = sup.max(d);
        if ctx.c.max_sup_error.is_none() && !ctx.within(v, se, o, 0.0, 0.01) {
            out.failures.push(format!("x = {x}: {v} ± {se} vs oracle {o}"));
        }
        table.push(vec![num(x), num(v), num(se), num(o), num(d)]);
    }
    if let Some(tol) = ctx.c.max_sup_error {
        if sup > tol {
            out.failures.push(format!("sup difference {sup} exceeds {tol}"));
        }
    }
    out.summary.insert("sup_diff".into(), json!(sup));
    out.table = table;
    out
}

fn stable_exit_compare(ctx: &Ctx<'_>, index: f64) -> Result<ExperimentOutput, CliError> {
    let Some((a, b)) = ctx.problem.interval else {
        return Err(CliError::Schema("oracle-compare for the stable process needs an interval".into()));
    };
    let mc = ctx.mc(10_000, 1e-3)?;
    let horizon = ctx.n.horizon.unwrap_or(20.0);
    let x0 = ctx.problem.x0[0];
    let est = estimate_mean_exit_time(&ctx.spec().process, &[x0], mc, horizon).map_err(run_err)?;
    let frac = fractional_elliptic(index, (a, b), &|_| 1.0, ctx.n.fd_cells.unwrap_or(400)).map_err(run_err)?;
    let fv = frac.at(x0);
    let closed = stable_exit_time_interval(index, 0.5 * (a + b), 0.5 * (b - a), x0);
    let mut table = Table::new(&["method", "value", "std_error"]);
    table.push(vec!["monte_carlo".into(), num(est.mean), num(est.std_error)]);
    table.push(vec!["fractional_solver".into(), num(fv), String::new()]);
    table.push(vec!["closed_form".into(), num(closed), String::new()]);
    let mut out = ExperimentOutput { table, ..Default::default() };
    if !ctx.within(est.mean, est.std_error, fv, 0.02, 0.0) {
        out.failures.push(format!("Monte Carlo {} ± {} vs fractional solver {fv}", est.mean, est.std_error));
    }
    out.summary.insert("monte_carlo".into(), json!(est.mean));
    out.summary.insert("fractional".into(), json!(fv));
    out.summary.insert("closed_form".into(), json!(closed));
    out.summary.insert("warnings".into(), json!(est.warnings.iter().chain(&frac.warnings).collect::<Vec<_>>()));
    Ok(out)
}

/// Gradient problem through the transform: solve the measure-data problem for
/// `w` with driver `g·H(w)`, push through `Φ⁻¹`, and compare with the direct
/// finite-difference solve of the gradient equation.
fn transform_compare(ctx: &Ctx<'_>, iv: (f64, f64)) -> Result<ExperimentOutput, CliError> {
    let spec = ctx.spec();
    let c = &spec.coefficients;
    if !c.f.is_zero() || !c.g.is_linear_free() || spec.measure.is_surface() || spec.process.killing_rate != 0.0 {
        return Err(CliError::Schema(
            "the transform comparison needs f = 0, g independent of y, a measure in the interior and no killing".into(),
        ));
    }
    let h = sign_nonlinearity(ctx)?;
    let hf = ctx.problem.h.as_ref().expect("checked").of_y().expect("checked");
    let mc = ctx.mc(2000, 1e-3)?;
    let t_final = ctx.n.t_final.unwrap_or(0.5);
    let grid = ctx.grid(41)?;
    let sup_phi = (0..grid.len()).map(|p| c.phi.eval(&grid.point(p)).abs()).fold(0.0, f64::max);
    let sup_src = (0..=200)
        .map(|i| {
            let y = iv.0 + (iv.1 - iv.0) * i as f64 / 200.0;
            (spec.measure.density(&[y]) * c.g.eval(&[y], 0.0)).abs()
        })
        .fold(0.0, f64::max);
    let len = iv.1 - iv.0;
    let s_max = ctx.n.s_max.unwrap_or_else(|| s_max_bound(sup_phi, sup_src * len * len / 4.0, 2.0));
    let tr = Arc::new(build_transform(&h, s_max, ctx.n.quad_tol.unwrap_or(1e-8)).map_err(run_err)?);
    for p in 0..grid.len() {
        let x = grid.point(p);
        tr.phi(c.phi.eval(&x)).map_err(|e| CliError::Schema(format!("initial datum outside the transform range at {x:?}: {e}")))?;
    }
    let phi = c.phi.clone();
    let tr_phi = tr.clone();
    let phi_w = SpatialFn::new(format!("Phi({})", phi.name()), move |x: &[f64]| tr_phi.phi(phi.eval(x)).unwrap_or(f64::NAN));
    let g_w = match &c.g {
        CoefFn::Const(v) if *v == 1.0 => tr.h_coefficient(),
        g => {
            let (g, tr) = (g.clone(), tr.clone());
            CoefFn::new(format!("H·{}", g.name()), move |x: &[f64], w| g.eval(x, 0.0) * tr.h_extended(w))
        }
    };
    let wspec = ProblemSpec::new(
        spec.process.clone(),
        Coefficients::new(CoefFn::zero(), g_w, phi_w, 0.0),
        spec.measure.clone(),
    )
    .map_err(schema_err)?;
    let params = ctx.parabolic_params(mc, 10);
    let sol = solve_parabolic(&wspec, t_final, &grid, &params).map_err(run_err)?;
    let w = sol.solution.last();
    let u = push_solution(w, &tr).map_err(run_err)?;
    let fdp = fd_problem(spec).with_gradient(hf);
    let fd = fd_parabolic(&fdp, t_final, &fd_grid(ctx, iv, Some(1e-3))?).map_err(run_err)?;
    let mut values = Vec::new();
    for p in 0..u.len() {
        let x = u.point(p)[0];
        // Φ'(u) = e^{-G(u)}
        let se_u = w.std_error(p) * tr.g(u.values[p]).map(f64::exp).unwrap_or(f64::INFINITY);
        values.push((x, u.values[p], se_u, fd.at(x)));
    }
    let mut out = compare_rows(ctx, &values, &["x", "u_mc", "std_error", "u_fd", "abs_diff"]);
    out.summary.insert("s_max".into(), json!(s_max));
    out.summary.insert("fd_richardson_error".into(), json!(fd.richardson_error));
    out.summary.insert("sweep_changes_last_slice".into(), json!(sol.sweep_changes.last()));
    Ok(out)
}
