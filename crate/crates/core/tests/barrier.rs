use hbvp::barrier::{
    beta2, boundary_ratios, build_barrier, verify_supersolution, Barrier, BarrierSearch, BarrierSpec, FdPolicy,
};
use hbvp::{DomainModel, SpectralParams};

fn setup(n: usize, k: usize, mu: f64) -> (DomainModel, SpectralParams) {
    let d = DomainModel::with_default_beta(n, k).unwrap();
    (d, SpectralParams::new(&d, mu).unwrap())
}

#[test]
fn standard_barrier_is_a_supersolution() {
    let (d, par) = setup(3, 0, 2.0);
    let spec = BarrierSpec::standard(&d, &par, 2.0);
    assert!((spec.radius - beta2(&d) / 2.0).abs() < 1e-15);
    let (b, rep) = build_barrier(&d, &par, 2.0, spec, BarrierSearch::default()).unwrap();
    assert!(b.spec.lambda < 2f64.powi(30));
    assert!(rep.get("violating_fraction").unwrap() < 1e-3, "{rep:?}");
    assert!(rep.pass);
}

#[test]
fn barrier_dominates_boundary_weight() {
    let (d, par) = setup(3, 0, 2.0);
    let b = Barrier::new(&d, &par, 2.0, BarrierSpec::standard(&d, &par, 2.0)).unwrap();
    let r = boundary_ratios(&b, &par, 8, 4);
    assert!(!r.is_empty());
    assert!(r.iter().all(|&v| v < 1e-3), "{r:?}");
}

#[test]
fn supersolution_other_dimensions() {
    for (n, k, mu, p) in [(4, 1, 0.5, 3.0), (3, 0, 2.25, 2.0)] {
        let (d, par) = setup(n, k, mu);
        let spec = BarrierSpec::standard(&d, &par, p);
        let (b, rep) = build_barrier(&d, &par, p, spec, BarrierSearch { n_probe: 4000, ..Default::default() }).unwrap();
        assert!(rep.pass && b.spec.lambda.is_finite(), "{rep:?}");
    }
}

#[test]
fn verify_rejects_bad_policy() {
    let (d, par) = setup(3, 0, 2.0);
    let b = Barrier::new(&d, &par, 2.0, BarrierSpec::standard(&d, &par, 2.0)).unwrap();
    assert!(verify_supersolution(&b, 0, FdPolicy::default(), 0).is_err());
    assert!(verify_supersolution(&b, 10, FdPolicy { rel: 0.5 }, 0).is_err());
}
