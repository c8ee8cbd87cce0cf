use std::sync::Arc;

use hbvp::barrier::ko_check;
use hbvp::cloud::{make_cloud, Grading, SampleCloud};
use hbvp::measure::BoundaryMeasure;
use hbvp::solvers::{sigma_threshold, solve_absorption, SolverOptions, SourceProblem, Status};
use hbvp::{DomainModel, SpectralParams};

fn setup(n: usize) -> (DomainModel, SpectralParams, Arc<SampleCloud>, BoundaryMeasure) {
    let d = DomainModel::with_default_beta(3, 0).unwrap();
    let par = SpectralParams::new(&d, 2.0).unwrap();
    let c = Arc::new(make_cloud(&d, n, Grading::default(), 1).unwrap());
    let nu = BoundaryMeasure::dirac(d.sigma_anchor(), 1.0).unwrap();
    (d, par, c, nu)
}

#[test]
fn subcritical_source_has_positive_threshold() {
    let (d, par, c, nu) = setup(3000);
    let prob = SourceProblem::new(&d, &par, 2.0, &nu, c, SolverOptions::default()).unwrap();
    let r = sigma_threshold(&prob).unwrap();
    assert!(r.sigma > 0.0 && r.sigma.is_finite(), "{r:?}");
    assert!(r.lower <= r.upper);
    let (_, rep) = prob.solve_v(r.lower, None).unwrap();
    assert_eq!(rep.status, Status::Converged);
    assert!(rep.probe_residual.unwrap() < 1e-6);
}

#[test]
fn supercritical_source_diverges_for_all_sigma() {
    let (d, par, c, nu) = setup(3000);
    let prob = SourceProblem::new(&d, &par, 4.0, &nu, c, SolverOptions::default()).unwrap();
    let r = sigma_threshold(&prob).unwrap();
    assert_eq!(r.sigma, 0.0, "{r:?}");
    let (_, rep) = prob.solve_v(1e-6, None).unwrap();
    assert_eq!(rep.status, Status::Diverged);
}

#[test]
fn source_solutions_are_ordered_in_sigma() {
    let (d, par, c, nu) = setup(2000);
    let prob = SourceProblem::new(&d, &par, 2.0, &nu, c, SolverOptions::default()).unwrap();
    let (v1, r1) = prob.solve_v(1e-3, None).unwrap();
    let (v2, r2) = prob.solve_v(2e-3, None).unwrap();
    assert!(r1.converged() && r2.converged());
    assert!(v1.iter().zip(&v2).all(|(a, b)| a <= b));
}

#[test]
fn zero_data_gives_zero_solution() {
    let (d, par, c, _) = setup(1000);
    let nu = BoundaryMeasure::dirac(d.sigma_anchor(), 0.0).unwrap();
    let prob = SourceProblem::new(&d, &par, 2.0, &nu, c, SolverOptions::default()).unwrap();
    let (v, rep) = prob.solve_v(1.0, None).unwrap();
    assert!(rep.converged());
    assert!(v.iter().all(|&x| x == 0.0));
}

#[test]
fn absorption_converges_and_brackets() {
    let (d, par, c, _) = setup(3000);
    let nu = BoundaryMeasure::dirac(d.sigma_anchor(), 0.01).unwrap();
    let (u, rep) = solve_absorption(&d, &par, 1.5, &nu, c, SolverOptions::default()).unwrap();
    assert_eq!(rep.status, Status::Converged);
    assert!(rep.bracket.unwrap() < 1e-6);
    assert!(u.values.iter().all(|&v| v >= 0.0));
}

#[test]
fn absorption_unit_mass_converges() {
    let (d, par, c, nu) = setup(3000);
    let (_, rep) = solve_absorption(&d, &par, 1.5, &nu, c, SolverOptions::default()).unwrap();
    assert_eq!(rep.status, Status::Converged, "{}", rep.detail);
}

#[test]
fn ko_constant_stable_under_refinement() {
    let (d, par, c1, _) = setup(3000);
    let c2 = Arc::new(make_cloud(&d, 6000, Grading::default(), 1).unwrap());
    let nu = BoundaryMeasure::dirac(d.sigma_anchor(), 0.01).unwrap();
    let (u1, _) = solve_absorption(&d, &par, 1.5, &nu, c1, SolverOptions::default()).unwrap();
    let (u2, _) = solve_absorption(&d, &par, 1.5, &nu, c2, SolverOptions::default()).unwrap();
    let rep = ko_check(&u1, &u2, 1.5, &par, None).unwrap();
    assert!(rep.pass, "{rep:?}");
}
