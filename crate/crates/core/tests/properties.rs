use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use hbvp::barrier::{barrier_probes, ko_check, Barrier, BarrierSpec};
use hbvp::capacity::{cap_primal_upper, CapacityOptions, CapacityProblem, Piece, TargetSet};
use hbvp::cloud::{make_cloud, Field, Grading, SampleCloud};
use hbvp::config::{RunConfig, SCENARIO_KEYS};
use hbvp::measure::BoundaryMeasure;
use hbvp::numerics::norm;
use hbvp::operators::{DiagPolicy, OperatorHandle};
use hbvp::{alpha_pm, DomainModel, Kernel, KernelSpec, SpectralParams};

/// Admissible `(N, k, μ)` with `μ ≤ H²`.
fn admissible() -> impl Strategy<Value = (usize, usize, f64)> {
    (3usize..=7).prop_flat_map(|n| (Just(n), 0..n - 1)).prop_flat_map(|(n, k)| {
        let h = (n - k) as f64 / 2.0;
        (Just(n), Just(k), -2.0..=h * h)
    })
}

/// An interior point from a direction and a depth.
fn interior(n: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, n), 1e-6f64..0.999).prop_filter_map("zero direction", |(v, depth)| {
        let r = norm(&v);
        (r > 1e-3).then(|| v.iter().map(|x| x / r * (1.0 - depth)).collect())
    })
}

fn ball() -> (DomainModel, SpectralParams) {
    let d = DomainModel::with_default_beta(3, 0).unwrap();
    (d, SpectralParams::new(&d, 2.0).unwrap())
}

fn small_cloud() -> Arc<SampleCloud> {
    static CLOUD: OnceLock<Arc<SampleCloud>> = OnceLock::new();
    CLOUD
        .get_or_init(|| {
            let (d, _) = ball();
            Arc::new(make_cloud(&d, 1500, Grading::default(), 3).unwrap())
        })
        .clone()
}

fn green_handle() -> &'static OperatorHandle {
    static H: OnceLock<OperatorHandle> = OnceLock::new();
    H.get_or_init(|| {
        let (d, p) = ball();
        OperatorHandle::new(Kernel::new(KernelSpec::green(d, p)).unwrap(), small_cloud(), DiagPolicy::CellCorrection)
            .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn characteristic_exponents_are_roots((n, k, mu) in admissible()) {
        let (am, ap) = alpha_pm(mu, n, k).unwrap();
        let s = (n - k) as f64;
        for a in [am, ap] {
            prop_assert!((a * a - s * a + mu).abs() < 1e-12 * (1.0 + s * s));
        }
        prop_assert!(am <= ap);
    }

    #[test]
    fn boundary_distance_below_sigma_distance((n, k) in (3usize..=6).prop_flat_map(|n| (Just(n), 0..n)), x in interior(6)) {
        let d = DomainModel::with_default_beta(n, k).unwrap();
        let x = &x[..n];
        let r = norm(x);
        prop_assume!(r > 1e-3 && r < 1.0);
        let x: Vec<f64> = x.to_vec();
        prop_assert!(d.d_boundary(&x) <= d.d_sigma(&x));
    }

    #[test]
    fn modified_distance_comparable_in_tube(
        (n, k) in (3usize..=6).prop_flat_map(|n| (Just(n), 0..n - 1)),
        u in prop::collection::vec(-1.0f64..1.0, 6),
        v in prop::collection::vec(-1.0f64..1.0, 6),
        geo in 0.0f64..0.45,
        depth in 1e-6f64..0.45,
    ) {
        let d = DomainModel::with_default_beta(n, k).unwrap();
        // unit s on Σ, unit w normal to the span of Σ
        let mut s = vec![0.0; n];
        s[..=k].copy_from_slice(&u[..=k]);
        let mut w = vec![0.0; n];
        w[k + 1..].copy_from_slice(&v[k + 1..n]);
        let (ns, nw) = (norm(&s), norm(&w));
        prop_assume!(ns > 1e-3 && nw > 1e-3);
        let x: Vec<f64> = (0..n).map(|i| (1.0 - depth) * (geo.cos() * s[i] / ns + geo.sin() * w[i] / nw)).collect();
        let ds = d.d_sigma(&x);
        prop_assume!(ds < 0.5 && ds > 0.0);
        let ratio = d.d_sigma_tilde(&x).unwrap() / ds;
        prop_assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn weight_is_continuous_across_cutoff_shells(theta in 0.02f64..0.2, depth in 1e-3f64..0.05, dir in 0.0f64..std::f64::consts::TAU) {
        let (d, p) = ball();
        let r = 1.0 - depth;
        let x = [r * theta.cos(), r * theta.sin() * dir.cos(), r * theta.sin() * dir.sin()];
        let y = [x[0], x[1] + 1e-9, x[2]];
        let (wx, wy) = (d.weight_w_tilde(&p, &x).unwrap(), d.weight_w_tilde(&p, &y).unwrap());
        prop_assert!((wx - wy).abs() <= 1e-5 * wx.abs().max(wy.abs()), "{wx} {wy}");
    }

    #[test]
    fn green_positive_and_symmetric((n, k, mu) in admissible(), x in interior(7), y in interior(7)) {
        let d = DomainModel::with_default_beta(n, k).unwrap();
        let p = SpectralParams::new(&d, mu).unwrap();
        let g = Kernel::new(KernelSpec::green(d, p)).unwrap();
        let (x, y) = (&x[..n], &y[..n]);
        prop_assume!(norm(x) < 1.0 && norm(y) < 1.0 && x != y && d.d_sigma(x) > 0.0 && d.d_sigma(y) > 0.0);
        let (a, b) = (g.eval(x, y).unwrap(), g.eval(y, x).unwrap());
        prop_assert!(a > 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(b), "{a} {b}");
    }

    #[test]
    fn n_alpha_positive_and_symmetric(x in interior(3), y in interior(3), frac in 0.0f64..1.0) {
        let (d, p) = ball();
        let k = Kernel::new(KernelSpec::n_alpha(d, p, frac * 2.0 * p.alpha_minus)).unwrap();
        prop_assume!(x != y);
        let (a, b) = (k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
        prop_assert!(a > 0.0 && (a - b).abs() <= 1e-12 * a.max(b));
    }

    #[test]
    fn martin_positive_and_branch_total((n, k, mu) in admissible(), x in interior(7)) {
        let d = DomainModel::with_default_beta(n, k).unwrap();
        let p = SpectralParams::new(&d, mu).unwrap();
        let m = Kernel::new(KernelSpec::martin(d, p)).unwrap();
        let g = Kernel::new(KernelSpec::green(d, p)).unwrap();
        prop_assert_eq!(m.branch(), g.branch());
        let x = &x[..n];
        prop_assume!(norm(x) < 1.0 && d.d_sigma(x) > 0.0);
        let z = d.sigma_anchor();
        prop_assume!(hbvp::numerics::dist(x, &z) > 1e-6);
        prop_assert!(m.eval(x, &z).unwrap() > 0.0);
    }

    #[test]
    fn restriction_conserves_mass(masses in prop::collection::vec(0.0f64..3.0, 1..8), angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 8), cut in -1.0f64..1.0) {
        let mut nu = BoundaryMeasure::zero(3);
        for (m, a) in masses.iter().zip(&angles) {
            nu.add_atom(vec![a.cos(), a.sin(), 0.0], *m).unwrap();
        }
        let (inside, outside) = nu.restrict(|x| x[0] > cut);
        let total = nu.total_mass();
        prop_assert!((inside.total_mass() + outside.total_mass() - total).abs() <= 1e-12 * total.max(1.0));
    }

    #[test]
    fn ko_fit_uses_the_exact_exponent(p in 1.01f64..6.0) {
        let (_, par) = ball();
        let f = Field::zeros(small_cloud());
        let rep = ko_check(&f, &f, p, &par, None).unwrap();
        prop_assert_eq!(rep.get("exponent").unwrap(), -2.0 / (p - 1.0));
    }

    #[test]
    fn unknown_config_keys_are_rejected(group in "domain|cloud|scenario|output|[a-z]{1,6}", name in "[a-zA-Z_0-9]{1,10}") {
        let key = format!("{group}.{name}");
        let known = match group.as_str() {
            "domain" => ["N", "n", "k", "mu", "beta0"].contains(&name.as_str()),
            "cloud" => ["resolution", "q", "tube", "tube_depth", "sigma_fraction", "seed"].contains(&name.as_str()),
            "scenario" => SCENARIO_KEYS.contains(&name.as_str()),
            "output" => name == "dir",
            _ => false,
        };
        let parsed = RunConfig::parse(&format!("{key} = 1"));
        if known {
            prop_assert!(parsed.is_ok(), "{key}");
        } else {
            prop_assert!(matches!(parsed, Err(hbvp::Error::Config(_))), "{key}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn green_operator_positive_and_monotone(f in prop::collection::vec(0.0f64..2.0, 1500), bump in prop::collection::vec(0.0f64..1.0, 1500)) {
        let h = green_handle();
        let n = h.cloud().len();
        let f: Vec<f64> = (0..n).map(|i| f[i % f.len()]).collect();
        let g: Vec<f64> = (0..n).map(|i| f[i] + bump[i % bump.len()]).collect();
        let (gf, gg) = (h.apply(&f).unwrap(), h.apply(&g).unwrap());
        prop_assert!(gf.iter().all(|v| *v >= 0.0));
        prop_assert!(gf.iter().zip(&gg).all(|(a, b)| a <= b));
    }

    #[test]
    fn barrier_positive_on_its_ball(p in 1.2f64..2.9, seed in 0u64..1000) {
        let (d, par) = ball();
        let b = Barrier::new(&d, &par, p, BarrierSpec::standard(&d, &par, p)).unwrap();
        for x in barrier_probes(&b, 64, seed) {
            let v = b.value(&x);
            prop_assert!(v > 0.0 && !v.is_nan(), "{v} at {x:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn primal_bound_monotone_for_nested_caps(r in 0.05f64..0.3, grow in 1.2f64..2.0, phi in 0.5f64..1.5) {
        let (d, par) = ball();
        let am = par.alpha_minus;
        let base = CapacityProblem::new(&d, TargetSet::empty(), 2.0 * am, 3.0, -3.0 * am, 2.0, small_cloud(), CapacityOptions::default()).unwrap();
        let center = vec![0.0, phi.cos(), phi.sin()];
        let cap = |r: f64| TargetSet::single(Piece::BoundaryCap { center: center.clone(), radius: r });
        let small = cap_primal_upper(&base.with_set(cap(r)).unwrap()).unwrap().value;
        let large = cap_primal_upper(&base.with_set(cap(r * grow)).unwrap()).unwrap().value;
        prop_assert!(small <= large, "{small} > {large}");
    }
}
