use fklab_core::feynman_kac::{
    potential, resolvent_equation_residual, semigroup_apply, semigroup_grid, spectral_oracle_interval, SpectralKind,
};
use fklab_core::{DomainSpec, Extension, GridFunction, McParams, ProcessSpec, SmoothMeasure, SpatialFn};

fn killed(rate: f64) -> ProcessSpec<f64> {
    ProcessSpec::killed_brownian(DomainSpec::interval(0.0, 1.0).unwrap()).unwrap().with_killing_rate(rate).unwrap()
}

fn bump() -> SpatialFn<f64> {
    SpatialFn::new("x(1-x)", |x: &[f64]| x[0] * (1.0 - x[0]))
}

#[test]
fn semigroup_of_a_multimode_datum_matches_the_series() {
    let spec = killed(0.5);
    let phi = bump();
    let mc = McParams::new(20_000, 1e-3, 31).unwrap();
    for (t, x) in [(0.05, 0.2), (0.2, 0.5), (0.5, 0.7)] {
        let est = semigroup_apply(&spec, &phi, t, &[x], mc).unwrap();
        let exact =
            spectral_oracle_interval((0.0, 1.0), SpectralKind::Semigroup { t }, &|y| y * (1.0 - y), x, 0.5).unwrap();
        assert!(est.agrees_with(exact, 3.0, 0.01 * exact), "t = {t}, x = {x}: {} vs {exact}", est.mean);
    }
}

#[test]
fn semigroup_grid_agrees_with_pointwise_estimates() {
    let spec = killed(0.0);
    let phi = bump();
    let mc = McParams::new(2000, 1e-3, 32).unwrap();
    let grid = GridFunction::uniform_1d(0.0, 1.0, 5, Extension::Constant { value: 0.0 }).unwrap();
    let g = semigroup_grid(&spec, &phi, 0.1, &grid, mc).unwrap();
    assert_eq!(g.values[0], 0.0);
    assert_eq!(g.values[4], 0.0);
    for p in 1..4 {
        let exact = spectral_oracle_interval((0.0, 1.0), SpectralKind::Semigroup { t: 0.1 }, &|y| y * (1.0 - y), grid.point(p)[0], 0.0)
            .unwrap();
        assert!((g.values[p] - exact).abs() <= 3.0 * g.std_error(p) + 0.005);
    }
}

#[test]
fn resolvent_of_lebesgue_measure_matches_the_series() {
    let spec = killed(1.0);
    let one = SpatialFn::constant(1.0);
    let mc = McParams::new(20_000, 1e-3, 33).unwrap();
    for (alpha, x) in [(0.0, 0.5), (2.0, 0.3), (10.0, 0.1)] {
        let est = potential(&spec, &SmoothMeasure::unit_lebesgue(), &one, alpha, &[x], mc, 20.0).unwrap();
        let exact =
            spectral_oracle_interval((0.0, 1.0), SpectralKind::Potential { alpha }, &|_| 1.0, x, 1.0).unwrap();
        assert!(est.agrees_with(exact, 3.0, 0.01 * exact), "α = {alpha}: {} vs {exact}", est.mean);
    }
}

#[test]
fn potential_of_a_mollified_point_is_close_to_the_green_function() {
    let spec = killed(0.0);
    let mc = McParams::new(20_000, 1e-3, 34).unwrap();
    let m = SmoothMeasure::mollified_point(vec![0.5], 1.0, 0.02).unwrap();
    for x in [0.25, 0.5] {
        let est = potential(&spec, &m, &SpatialFn::constant(1.0), 0.0, &[x], mc, 20.0).unwrap();
        let tent = x.min(1.0 - x);
        assert!(est.agrees_with(tent, 3.0, 0.01), "x = {x}: {} vs {tent}", est.mean);
    }
}

#[test]
fn resolvent_equation_holds_within_noise() {
    let spec = killed(0.0);
    let grid = vec![vec![0.25], vec![0.5]];
    let mc = McParams::new(2000, 1e-3, 35).unwrap();
    let r = resolvent_equation_residual(&spec, &SmoothMeasure::unit_lebesgue(), 3.0, &grid, mc, 4).unwrap();
    assert!(r.within(3.0), "{:?}", r.points);
}
