use fklab_core::reference::{fd_elliptic, fd_parabolic, FdBoundary, FdGrid, FdPicard, FdProblem, NeumannConvention};
use fklab_core::solver::{solve_elliptic, solve_parabolic};
use fklab_core::{
    CoefFn, Coefficients, DomainSpec, EllipticParams, McParams, ParabolicParams, ProblemSpec, ProcessSpec,
    SmoothMeasure, SpatialFn,
};

fn unit() -> DomainSpec<f64> {
    DomainSpec::interval(0.0, 1.0).unwrap()
}

fn sin_pi() -> SpatialFn<f64> {
    SpatialFn::new("sin(pi x)", |x: &[f64]| (std::f64::consts::PI * x[0]).sin())
}

fn semilinear(phi: SpatialFn<f64>) -> ProblemSpec<f64> {
    let f = CoefFn::new("-y^3+1", |_: &[f64], y: f64| 1.0 - y * y * y);
    let g = CoefFn::new("1/(1+y+)", |_: &[f64], y: f64| 1.0 / (1.0 + y.max(0.0)));
    let m = SmoothMeasure::mollified_point(vec![0.5], 1.0, 0.05).unwrap();
    ProblemSpec::new(ProcessSpec::killed_brownian(unit()).unwrap(), Coefficients::new(f, g, phi, 0.0), m).unwrap()
}

#[test]
fn nonnegative_data_give_nonnegative_solutions() {
    let problem = semilinear(sin_pi());
    let grid = problem.grid(11).unwrap();
    let params = ParabolicParams::new(McParams::new(1000, 1e-3, 41).unwrap(), 10);
    let sol = solve_parabolic(&problem, 0.5, &grid, &params).unwrap();
    for slice in &sol.solution.slices {
        for p in 0..slice.len() {
            assert!(slice.values[p] >= -3.0 * slice.std_error(p), "{}", slice.values[p]);
        }
    }
}

#[test]
fn solution_is_monotone_in_the_initial_datum() {
    let lower = semilinear(sin_pi());
    let upper = semilinear(SpatialFn::new("sin+", |x: &[f64]| (std::f64::consts::PI * x[0]).sin() + 0.5 * x[0] * (1.0 - x[0])));
    let grid = lower.grid(11).unwrap();
    let params = ParabolicParams::new(McParams::new(1000, 1e-3, 42).unwrap(), 10);
    let a = solve_parabolic(&lower, 0.3, &grid, &params).unwrap();
    let b = solve_parabolic(&upper, 0.3, &grid, &params).unwrap();
    let (a, b) = (a.solution.last(), b.solution.last());
    for p in 0..a.len() {
        assert!(a.values[p] <= b.values[p] + 3.0 * (a.std_error(p) + b.std_error(p)));
    }
}

#[test]
fn linear_problems_reach_a_fixed_point_after_one_sweep() {
    let c = Coefficients::new(CoefFn::of_x("1", |_: &[f64]| 1.0), CoefFn::zero(), sin_pi(), 0.0);
    let problem = ProblemSpec::new(ProcessSpec::killed_brownian(unit()).unwrap(), c, SmoothMeasure::zero()).unwrap();
    let grid = problem.grid(9).unwrap();
    let mut params = ParabolicParams::new(McParams::new(500, 1e-3, 43).unwrap(), 5);
    params.picard_sweeps = 3;
    let sol = solve_parabolic(&problem, 0.25, &grid, &params).unwrap();
    for changes in &sol.sweep_changes {
        assert!(changes.iter().skip(1).all(|&d| d == 0.0), "{changes:?}");
    }
}

#[test]
fn elliptic_picard_trace_contracts() {
    let problem = semilinear(SpatialFn::zero());
    let grid = problem.grid(11).unwrap();
    let mut params = EllipticParams::new(McParams::new(2000, 1e-3, 44).unwrap(), 10.0);
    params.tol_floor = 1e-4;
    let sol = solve_elliptic(&problem, &grid, &params).unwrap();
    assert!(sol.trace.len() >= 2);
    for w in sol.trace.windows(2) {
        assert!(w[1] <= 1.5 * w[0], "{:?}", sol.trace);
    }
    assert!(sol.contraction < 1.0);
}

#[test]
fn elliptic_semilinear_matches_finite_differences() {
    let problem = semilinear(SpatialFn::zero());
    let grid = problem.grid(11).unwrap();
    let sol = solve_elliptic(&problem, &grid, &EllipticParams::new(McParams::new(4000, 1e-3, 45).unwrap(), 10.0)).unwrap();
    let c = &problem.coefficients;
    let fd = fd_elliptic(
        &FdProblem::new(c.f.clone(), c.g.clone(), problem.measure.clone(), c.phi.clone()),
        &FdGrid::new(0.0, 1.0, 400, 1.0 / 400.0, FdBoundary::Dirichlet0).unwrap(),
        FdPicard::default(),
    )
    .unwrap();
    for p in 0..grid.len() {
        let x = grid.point(p)[0];
        let v = sol.solution.values[p];
        assert!((v - fd.at(x)).abs() <= 3.0 * sol.solution.std_error(p) + 0.01, "x = {x}: {v} vs {}", fd.at(x));
    }
}

#[test]
fn reflected_surface_problem_matches_neumann_finite_differences() {
    let c = Coefficients::new(CoefFn::zero(), CoefFn::constant(1.0), SpatialFn::zero(), 0.0);
    let m = SmoothMeasure::surface(SpatialFn::constant(1.0));
    let problem = ProblemSpec::new(ProcessSpec::reflected_brownian(unit()).unwrap(), c.clone(), m.clone()).unwrap();
    let grid = problem.grid(21).unwrap();
    let params = ParabolicParams::new(McParams::new(4000, 1e-3, 46).unwrap(), 5);
    let t = 0.25;
    let sol = solve_parabolic(&problem, t, &grid, &params).unwrap();
    let fd = fd_parabolic(
        &FdProblem::new(c.f, c.g, m, c.phi),
        t,
        &FdGrid::new(0.0, 1.0, 200, 1e-3, FdBoundary::NeumannFlux { convention: NeumannConvention::Half }).unwrap(),
    )
    .unwrap();
    let u = sol.solution.last();
    for p in 0..u.len() {
        let x = u.point(p)[0];
        assert!((u.values[p] - fd.at(x)).abs() <= 3.0 * u.std_error(p) + 0.03, "x = {x}: {} vs {}", u.values[p], fd.at(x));
    }
    // total mass injected through both ends is E_m l_t = 2t
    let mean = fd.values.iter().sum::<f64>() / fd.values.len() as f64;
    assert!((mean - 2.0 * t).abs() < 0.02, "{mean}");
}
