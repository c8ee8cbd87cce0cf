use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use hbvp::capacity::{
    cap_dual_lower, cap_primal_upper, estimate, riesz_sigma_cap, vartheta, CapacityOptions, CapacityProblem, Piece,
    TargetSet,
};
use hbvp::cloud::{make_cloud, Grading, SampleCloud};
use hbvp::numerics::norm;
use hbvp::polar::{polar_nodes, PolarSpec};
use hbvp::{DomainModel, SpectralParams};
use proptest::prelude::*;

fn boundary_problem() -> CapacityProblem {
    let d = DomainModel::with_default_beta(3, 0).unwrap();
    let par = SpectralParams::new(&d, 2.0).unwrap();
    let p = 2.0;
    let am = par.alpha_minus;
    let c = Arc::new(make_cloud(&d, 6000, Grading::default(), 1).unwrap());
    CapacityProblem::new(
        &d,
        TargetSet::empty(),
        2.0 * am,
        p + 1.0,
        -am * (p + 1.0),
        p / (p - 1.0),
        c,
        CapacityOptions::default(),
    )
    .unwrap()
}

fn cap(center: &[f64], r: f64) -> TargetSet {
    TargetSet::single(Piece::BoundaryCap { center: center.to_vec(), radius: r })
}

fn polar_cloud(d: &DomainModel, center: &[f64], axis: &[f64], theta_max: f64, n_azimuth: usize) -> Arc<SampleCloud> {
    let spec = PolarSpec { r_min: 1e-4, r_max: 1.5, per_octave: 3, theta_max, n_theta: 16, n_azimuth, seed: 1 };
    let nodes = polar_nodes(center, axis, &spec, |y| norm(y) < 1.0);
    Arc::new(SampleCloud::from_points(*d, Grading::default(), 0, nodes.coords, nodes.weights).unwrap())
}

#[test]
fn dyadic_caps_sandwich_and_monotone() {
    let base = boundary_problem();
    let center = [0.0, 1.0, 0.0];
    let mut uppers = Vec::new();
    for r in [0.4, 0.2, 0.1] {
        let e = estimate(&base.with_set(cap(&center, r)).unwrap()).unwrap();
        assert!(e.feasible);
        assert!(e.lower > 0.0 && e.lower <= e.upper, "{e:?}");
        assert!(e.upper / e.lower <= 10.0, "{e:?}");
        uppers.push(e.upper);
    }
    assert!(uppers[2] <= uppers[1] && uppers[1] <= uppers[0], "{uppers:?}");
}

#[test]
fn caps_at_sigma_sandwich() {
    let base = boundary_problem();
    let z = base.domain.sigma_anchor();
    for r in [0.2, 0.1, 0.05] {
        let e = estimate(&base.with_set(cap(&z, r)).unwrap()).unwrap();
        assert!(e.lower <= e.upper && e.upper / e.lower <= 10.0, "{e:?}");
    }
}

#[test]
fn union_is_subadditive() {
    let base = boundary_problem();
    let a = cap(&[0.0, 1.0, 0.0], 0.2);
    let b = cap(&[0.0, -1.0, 0.0], 0.2);
    let ua = cap_primal_upper(&base.with_set(a.clone()).unwrap()).unwrap().value;
    let ub = cap_primal_upper(&base.with_set(b.clone()).unwrap()).unwrap().value;
    let u = cap_primal_upper(&base.with_set(a.union(&b)).unwrap()).unwrap();
    assert!(u.feasible);
    assert!(u.value <= ua + ub, "{} > {} + {}", u.value, ua, ub);
    assert!(u.value >= ua.max(ub));
    let l = cap_dual_lower(&base.with_set(a.union(&b)).unwrap()).unwrap();
    assert!(l <= u.value);
}

#[test]
fn empty_set_has_zero_capacity() {
    let base = boundary_problem();
    let e = estimate(&base).unwrap();
    assert_eq!((e.lower, e.upper), (0.0, 0.0));
}

#[test]
fn interior_point_with_singular_potential_has_zero_lower_bound() {
    let d = DomainModel::with_default_beta(5, 2).unwrap();
    let c = Arc::new(make_cloud(&d, 2000, Grading::default(), 1).unwrap());
    let set = TargetSet::single(Piece::Point { at: vec![0.0, 0.0, 0.0, 0.3, 0.0] });
    let prob = CapacityProblem::new(&d, set, 0.0, 1.0, 0.0, 2.0, c, CapacityOptions::default()).unwrap();
    assert_eq!(cap_dual_lower(&prob).unwrap(), 0.0);
    assert!(cap_primal_upper(&prob).unwrap().value > 0.0);
}

#[test]
fn rejects_inadmissible_weights() {
    let base = boundary_problem();
    let d = base.domain;
    let c = base.cloud.clone();
    let o = CapacityOptions::default();
    assert!(CapacityProblem::new(&d, TargetSet::empty(), 2.0, 3.0, -3.0, 1.0, c.clone(), o).is_err());
    assert!(CapacityProblem::new(&d, TargetSet::empty(), 3.0, 3.0, -3.0, 2.0, c.clone(), o).is_err());
    assert!(CapacityProblem::new(&d, TargetSet::empty(), 2.0, 0.0, 0.0, 2.0, c.clone(), o).is_err());
    assert!(CapacityProblem::new(&d, TargetSet::empty(), 2.0, 3.0, -5.5, 2.0, c, o).is_err());
}

/// Small interior balls: `Cap ≍ r^{N-2s}` when `2s < N`.
#[test]
fn small_ball_scaling() {
    let d = DomainModel::with_default_beta(3, 0).unwrap();
    let center = vec![0.0, 0.5, 0.0];
    let c = polar_cloud(&d, &center, &[1.0, 0.0, 0.0], PI, 20);
    let s = 1.2;
    let base = CapacityProblem::new(&d, TargetSet::empty(), 0.0, 1.0, 0.0, s, c, CapacityOptions::default()).unwrap();
    let caps: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&r| {
            cap_dual_lower(
                &base.with_set(TargetSet::single(Piece::Ball { center: center.clone(), radius: r })).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let expected = 3.0 - 2.0 * s;
    for w in caps.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((slope - expected).abs() < 0.1, "slope {slope} vs {expected}");
    }
}

fn sigma_setup() -> (DomainModel, SpectralParams, f64) {
    let d = DomainModel::with_default_beta(4, 1).unwrap();
    let par = SpectralParams::new(&d, 0.5).unwrap();
    let th = vartheta(2.0, par.alpha_plus);
    (d, par, th)
}

fn sigma_cap(d: &DomainModel, r: f64) -> TargetSet {
    TargetSet::single(Piece::SigmaCap { center: d.sigma_anchor(), radius: r })
}

#[test]
fn riesz_chart_scaling_and_sandwich() {
    let (d, _, th) = sigma_setup();
    let kappa = 2.0;
    let mut last: Option<f64> = None;
    for r in [0.4, 0.2, 0.1, 0.05] {
        let e = riesz_sigma_cap(&d, &sigma_cap(&d, r), th, kappa, CapacityOptions::default()).unwrap();
        let (lo, up) = (e.lower.unwrap(), e.upper.unwrap());
        assert!(lo <= up && up / lo < 1.1, "{e:?}");
        if let Some(prev) = last {
            let slope = (prev / up).log2();
            assert!((slope - (1.0 - th * kappa)).abs() < 0.05, "slope {slope}");
        }
        last = Some(up);
    }
}

#[test]
fn riesz_monotone_and_points() {
    let (d, _, th) = sigma_setup();
    let o = CapacityOptions::default();
    let small = riesz_sigma_cap(&d, &sigma_cap(&d, 0.1), th, 2.0, o).unwrap().upper.unwrap();
    let big = riesz_sigma_cap(&d, &sigma_cap(&d, 0.2), th, 2.0, o).unwrap().upper.unwrap();
    assert!(small <= big);
    let p1 = Piece::Point { at: d.sigma_anchor() };
    let p2 = Piece::Point { at: vec![0.3f64.cos(), 0.3f64.sin(), 0.0, 0.0] };
    let one = riesz_sigma_cap(&d, &TargetSet::single(p1.clone()), th, 2.0, o).unwrap().upper.unwrap();
    let two = riesz_sigma_cap(&d, &TargetSet { pieces: vec![p1, p2] }, th, 2.0, o).unwrap().upper.unwrap();
    assert!(two > one);
}

#[test]
fn riesz_trivial_when_vartheta_reaches_k() {
    let d = DomainModel::with_default_beta(3, 0).unwrap();
    let set = TargetSet::single(Piece::Point { at: d.sigma_anchor() });
    let e = riesz_sigma_cap(&d, &set, 0.5, 2.0, CapacityOptions::default()).unwrap();
    assert!(e.lower.is_none() && e.upper.is_none());
    assert!(riesz_sigma_cap(&d, &set, -0.5, 2.0, CapacityOptions::default()).is_err());
}

#[test]
fn riesz_tracks_sigma_cap_capacity() {
    let (d, par, th) = sigma_setup();
    let p = 2.0;
    let am = par.alpha_minus;
    let z = d.sigma_anchor();
    let axis: Vec<f64> = z.iter().map(|v| -v).collect();
    let c = polar_cloud(&d, &z, &axis, FRAC_PI_2, 48);
    let base = CapacityProblem::new(
        &d,
        TargetSet::empty(),
        2.0 * am,
        p + 1.0,
        -am * (p + 1.0),
        p / (p - 1.0),
        c,
        CapacityOptions::default(),
    )
    .unwrap();
    let ratios: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&r| {
            let set = sigma_cap(&d, r);
            let n = cap_primal_upper(&base.with_set(set.clone()).unwrap()).unwrap().value;
            riesz_sigma_cap(&d, &set, th, p / (p - 1.0), CapacityOptions::default()).unwrap().upper.unwrap() / n
        })
        .collect();
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(hi / lo < 1.25, "{ratios:?}");
}

proptest! {
    #[test]
    fn vartheta_decreases_and_vanishes_at_threshold(ap in 1.05f64..6.0, p1 in 1.01f64..10.0, p2 in 1.01f64..10.0) {
        let (a, b) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
        prop_assume!(b - a > 1e-9);
        prop_assert!(vartheta(a, ap) > vartheta(b, ap));
        let star = (ap + 1.0) / (ap - 1.0);
        prop_assert!(vartheta(star, ap).abs() < 1e-12 * star.max(1.0) * ap);
    }
}
