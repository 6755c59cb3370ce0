use fklab_core::reference::{fd_elliptic, FdBoundary, FdGrid, FdPicard, FdProblem};
use fklab_core::{revuz_check, CoefFn, DomainSpec, McParams, ProcessSpec, SmoothMeasure, SpatialFn};

fn unit() -> DomainSpec<f64> {
    DomainSpec::interval(0.0, 1.0).unwrap()
}

fn green_fd(measure: SmoothMeasure<f64>, exact_point: bool) -> fklab_core::reference::FdSolution {
    let mut p = FdProblem::new(CoefFn::zero(), CoefFn::constant(1.0), measure, SpatialFn::zero());
    if exact_point {
        p = p.with_exact_point();
    }
    fd_elliptic(&p, &FdGrid::new(0.0, 1.0, 400, 1.0 / 400.0, FdBoundary::Dirichlet0).unwrap(), FdPicard::default())
        .unwrap()
}

#[test]
fn mollified_point_potentials_converge_to_the_tent() {
    let exact = green_fd(SmoothMeasure::mollified_point(vec![0.5], 1.0, 0.1).unwrap(), true);
    assert!((exact.at(0.5) - 0.5).abs() < 1e-6);
    let mut prev = f64::INFINITY;
    for eps in [0.2, 0.1, 0.05, 0.025] {
        let m = SmoothMeasure::mollified_point(vec![0.5], 1.0, eps).unwrap();
        let v = green_fd(m, false);
        let err = (0..=40).map(|i| i as f64 / 40.0).map(|x| (v.at(x) - x.min(1.0 - x)).abs()).fold(0.0, f64::max);
        assert!(err < prev, "ε = {eps}: {err} ≥ {prev}");
        // peak deficit E|Z| for the hat kernel
        assert!((err - eps / 3.0).abs() < 0.02 * eps, "ε = {eps}: {err}");
        prev = err;
    }
}

#[test]
fn revuz_table_approaches_the_boundary_layer_value() {
    let spec = ProcessSpec::killed_brownian(unit()).unwrap();
    let mc = McParams::new(10_000, 1e-3, 51).unwrap();
    let rows = revuz_check(&spec, &SmoothMeasure::unit_lebesgue(), &[10.0, 100.0], mc).unwrap();
    for r in &rows {
        // α E_m ∫ e^{-αt} 1{t<ζ} dt = 1 - (2/k) tanh(k/2), k = √(2α)
        let k = (2.0 * r.alpha).sqrt();
        let exact = 1.0 - 2.0 / k * (k / 2.0).tanh();
        assert!(r.estimate.agrees_with(exact, 3.0, 0.01), "α = {}: {} vs {exact}", r.alpha, r.estimate.mean);
        assert_eq!(r.total_mass, 1.0);
    }
    assert!((rows[1].estimate.mean - 0.8586).abs() < 0.01);
    assert!((rows[0].estimate.mean - 1.0).abs() > (rows[1].estimate.mean - 1.0).abs());
}

#[test]
fn surface_measure_revuz_mass_is_exact_for_every_rate() {
    let spec = ProcessSpec::reflected_brownian(unit()).unwrap();
    let m = SmoothMeasure::surface(SpatialFn::constant(1.0));
    assert_eq!(m.total_mass(&unit()).unwrap(), 2.0);
    let mc = McParams::new(4000, 1e-4, 52).unwrap();
    for r in revuz_check(&spec, &m, &[5.0, 20.0], mc).unwrap() {
        assert!(r.estimate.agrees_with(2.0, 3.0, 0.06), "α = {}: {}", r.alpha, r.estimate.mean);
    }
}
