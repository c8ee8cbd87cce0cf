use hbvp::cloud::Grading;
use hbvp::config::RunConfig;
use hbvp::scenarios::{exponent_table, phase_scan, Axis, CellVerdict, Location, PhaseScanConfig, ScanMode};
use hbvp::solvers::SolverOptions;
use hbvp::DomainModel;

fn dom(n: usize, k: usize) -> DomainModel {
    DomainModel::with_default_beta(n, k).unwrap()
}

#[test]
fn exponent_table_examples() {
    let t = exponent_table(&dom(3, 0), 2.0).unwrap();
    assert_eq!((t.alpha_minus, t.alpha_plus), (1.0, 2.0));
    let e = t.exponents;
    assert_eq!((e.p_sigma, e.p_plus, e.p_boundary), (3.0, 3.0, 2.0));
    assert!(e.p_minus.is_infinite());
    assert_eq!(t.vartheta.last().unwrap().vartheta, 0.0);

    for n in 3..7 {
        let e = exponent_table(&dom(n, 1), 0.0).unwrap().exponents;
        let want = (n as f64 + 1.0) / (n as f64 - 1.0);
        assert!((e.p_sigma - want).abs() < 1e-14 && (e.p_boundary - want).abs() < 1e-14);
    }

    let t = exponent_table(&dom(4, 1), 2.25).unwrap();
    assert_eq!((t.alpha_minus, t.alpha_plus), (1.5, 1.5));
    assert!((t.exponents.p_plus - 5.0).abs() < 1e-14);
}

#[test]
fn vartheta_samples_decrease() {
    let t = exponent_table(&dom(5, 2), 1.0).unwrap();
    assert!(t.vartheta.windows(2).all(|w| w[1].vartheta < w[0].vartheta));
}

fn default_scan(location: &str) -> PhaseScanConfig {
    let mut c = RunConfig::default();
    c.set("scenario.location", location).unwrap();
    PhaseScanConfig::from_run(&c).unwrap()
}

fn flip_p(d: &hbvp::scenarios::PhaseDiagram) -> (f64, f64) {
    let row = |i: usize| d.cells[i * d.curves.len()].verdict;
    let last_conv =
        (0..d.p_grid.len()).filter(|&i| row(i) == CellVerdict::Converged).map(|i| d.p_grid[i]).fold(f64::NAN, f64::max);
    let first_div =
        (0..d.p_grid.len()).filter(|&i| row(i) == CellVerdict::Diverged).map(|i| d.p_grid[i]).fold(f64::NAN, f64::min);
    (last_conv, first_div)
}

#[test]
fn sigma_dirac_scan_flips_at_p_sigma() {
    let d = phase_scan(&default_scan("sigma")).unwrap();
    assert!(d.agreement >= 0.9, "{}", d.agreement);
    assert_eq!(d.cells.len(), 19 * 5);
    assert!(d.cells.iter().enumerate().all(|(i, c)| c.index == i));
    let (lo, hi) = flip_p(&d);
    let ps = d.curves[0].exponents.p_sigma;
    let h = 0.2 + 1e-9;
    assert!(lo < ps && hi > ps && ps - lo <= 2.0 * h && hi - ps <= 2.0 * h, "{lo} {hi}");
}

#[test]
fn boundary_dirac_scan_flips_at_p_boundary() {
    let d = phase_scan(&default_scan("boundary")).unwrap();
    assert!(d.agreement >= 0.9, "{}", d.agreement);
    let (lo, hi) = flip_p(&d);
    let pb = d.curves[0].exponents.p_boundary;
    assert_eq!(pb, 2.0);
    assert!(lo < pb && hi > pb && pb - lo <= 0.41 && hi - pb <= 0.41, "{lo} {hi}");
}

#[test]
fn mu_axis_tracks_the_critical_curve() {
    let mut c = RunConfig::default();
    c.set("scenario.axis", "mu").unwrap();
    c.set("scenario.p_grid", "1.2:4.8:19").unwrap();
    let d = phase_scan(&PhaseScanConfig::from_run(&c).unwrap()).unwrap();
    assert_eq!(d.curves.len(), 5);
    assert!(d.curves.windows(2).all(|w| w[1].exponents.p_sigma >= w[0].exponents.p_sigma));
    assert!(d.agreement >= 0.9, "{}", d.agreement);
}

#[test]
fn full_sigma_scan_has_monotone_boundary() {
    let cfg = PhaseScanConfig {
        domain: dom(3, 0),
        mu: 2.0,
        sigma: 1e-3,
        p_grid: vec![1.5, 2.0],
        axis: Axis::Sigma(vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0]),
        location: Location::Sigma,
        mode: ScanMode::Full,
        resolution: 1500,
        grading: Grading::default(),
        seed: 2,
        opts: SolverOptions::default(),
    };
    let d = phase_scan(&cfg).unwrap();
    for row in d.cells.chunks(6) {
        let first_div = row.iter().position(|c| c.verdict != CellVerdict::Converged).unwrap_or(row.len());
        assert!(first_div > 0, "smallest σ must converge");
        assert!(row[first_div..].iter().all(|c| c.verdict != CellVerdict::Converged), "{row:?}");
    }
    assert_eq!(d.agreement, 1.0);
}

#[test]
fn per_cell_failures_are_recorded() {
    // α₋ = 2 at μ = 6 (N = 5, k = 0) bounds the source exponent by 3
    let cfg = PhaseScanConfig {
        domain: dom(5, 0),
        mu: 6.0,
        sigma: 1e-3,
        p_grid: vec![1.2, 3.5],
        axis: Axis::Sigma(vec![1e-3]),
        location: Location::Sigma,
        mode: ScanMode::Full,
        resolution: 1200,
        grading: Grading::default(),
        seed: 0,
        opts: SolverOptions::default(),
    };
    let d = phase_scan(&cfg).unwrap();
    assert_eq!(d.failures, 1);
    assert_eq!(d.cells[1].verdict, CellVerdict::Failed);
    assert!(d.cells[1].error.is_some());
    assert_ne!(d.cells[0].verdict, CellVerdict::Failed);
}

#[test]
fn oversized_grids_are_rejected() {
    let mut c = RunConfig::default();
    c.set("scenario.p_grid", "1.1:5:21").unwrap();
    assert!(PhaseScanConfig::from_run(&c).is_err());
    let mut c = RunConfig::default();
    c.set("scenario.mode", "slow").unwrap();
    assert!(PhaseScanConfig::from_run(&c).is_err());
}

#[test]
fn csv_lists_every_cell() {
    let d = phase_scan(&default_scan("sigma")).unwrap();
    let csv = d.csv();
    assert!(csv.starts_with("index,p,sigma,verdict,measure,agrees\n"));
    assert_eq!(csv.lines().count(), d.cells.len() + 1);
}
