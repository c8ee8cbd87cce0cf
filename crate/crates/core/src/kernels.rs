//! Pointwise evaluation of the two-sided kernel estimates with implicit
//! constants set to 1.
//!
//! Every kernel here depends on a pair of points only through their distance
//! `r = |x - y|` and the two distance pairs `(d_∂Ω, d_Σ)`. [`SiteGeom`] carries
//! the latter so quadrature loops can precompute them once per point.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{DomainModel, SpectralParams};
use crate::numerics::{dist, gauss_legendre, norm, pow, sphere_area};

/// Distances of a point to `∂Ω` and to `Σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteGeom {
    pub d: f64,
    pub ds: f64,
}

impl SiteGeom {
    pub fn of(domain: &DomainModel, x: &[f64]) -> Self {
        Self { d: domain.d_boundary(x).max(0.0), ds: domain.d_sigma(x) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    Green,
    Martin,
    NAlpha,
    QuasiDist,
    NOneEps,
    NNminusEps,
    GH2Eps,
    GTildeH2Eps,
    KH2Eps,
}

impl KernelVariant {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "green" => Self::Green,
            "martin" => Self::Martin,
            "n_alpha" => Self::NAlpha,
            "quasi_dist" => Self::QuasiDist,
            "n_one_eps" => Self::NOneEps,
            "n_Nminus_eps" | "n_nminus_eps" => Self::NNminusEps,
            "g_h2_eps" => Self::GH2Eps,
            "g_tilde_h2_eps" => Self::GTildeH2Eps,
            "k_h2_eps" => Self::KH2Eps,
            other => return Err(Error::Config(format!("unknown kernel variant {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Green => "green",
            Self::Martin => "martin",
            Self::NAlpha => "n_alpha",
            Self::QuasiDist => "quasi_dist",
            Self::NOneEps => "n_one_eps",
            Self::NNminusEps => "n_Nminus_eps",
            Self::GH2Eps => "g_h2_eps",
            Self::GTildeH2Eps => "g_tilde_h2_eps",
            Self::KH2Eps => "k_h2_eps",
        }
    }

    /// Second argument lives on `∂Ω` rather than in `Ω`.
    pub fn is_boundary_kernel(self) -> bool {
        matches!(self, Self::Martin | Self::KH2Eps)
    }

    fn is_eps_family(self) -> bool {
        matches!(self, Self::NOneEps | Self::NNminusEps | Self::GH2Eps | Self::GTildeH2Eps | Self::KH2Eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub params: SpectralParams,
    pub domain: DomainModel,
}

impl KernelSpec {
    pub fn green(domain: DomainModel, params: SpectralParams) -> Self {
        Self { variant: KernelVariant::Green, alpha: None, eps: None, params, domain }
    }

    pub fn martin(domain: DomainModel, params: SpectralParams) -> Self {
        Self { variant: KernelVariant::Martin, alpha: None, eps: None, params, domain }
    }

    pub fn n_alpha(domain: DomainModel, params: SpectralParams, alpha: f64) -> Self {
        Self { variant: KernelVariant::NAlpha, alpha: Some(alpha), eps: None, params, domain }
    }

    pub fn eps(domain: DomainModel, params: SpectralParams, variant: KernelVariant, eps: f64) -> Self {
        Self { variant, alpha: None, eps: Some(eps), params, domain }
    }
}

/// Which estimate formula a Green/Martin kernel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// Power-law estimates (`μ < H²`, or `μ = H²` with `k > 0`).
    Power,
    /// Logarithmic estimates (`k = 0`, `μ = N²/4`).
    Log,
    /// Kernels without case distinction.
    Single,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Power => "i",
            Branch::Log => "ii",
            Branch::Single => "-",
        }
    }
}

/// A validated kernel ready for evaluation.
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    branch: Branch,
    n: f64,
    n_minus_2: i32,
    /// `α₋` (Green/Martin), `α` (N_α family) or `N - ε` (ε family).
    expo: f64,
    eps: f64,
}

impl Kernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        let dom = &spec.domain;
        let n = dom.dim as f64;
        let log_case = spec.params.is_point_log_case(dom);
        let mut eps = 0.0;
        let (branch, expo) = match spec.variant {
            KernelVariant::Green | KernelVariant::Martin => {
                if log_case {
                    (Branch::Log, n / 2.0)
                } else {
                    (Branch::Power, spec.params.alpha_minus)
                }
            }
            KernelVariant::NAlpha | KernelVariant::QuasiDist => {
                let a = spec.alpha.ok_or_else(|| Error::Domain("n_alpha needs alpha".into()))?;
                if a > n {
                    return invalid(format!("alpha = {a} exceeds N = {n}"));
                }
                (Branch::Single, a)
            }
            v if v.is_eps_family() => {
                let e = spec.eps.ok_or_else(|| Error::Domain("ε kernels need eps".into()))?;
                if !(e > 0.0 && e < 2.0) {
                    return invalid(format!("eps must lie in (0, 2), got {e}"));
                }
                if !log_case {
                    return invalid("ε kernels require k = 0 and μ = N²/4");
                }
                eps = e;
                (Branch::Single, n - e)
            }
            _ => unreachable!(),
        };
        Ok(Self { spec, branch, n, n_minus_2: dom.dim as i32 - 2, expo, eps })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn variant(&self) -> KernelVariant {
        self.spec.variant
    }

    pub fn domain(&self) -> &DomainModel {
        &self.spec.domain
    }

    pub fn is_symmetric(&self) -> bool {
        !self.spec.variant.is_boundary_kernel()
    }

    /// Evaluate at two points, validating their position.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let dom = &self.spec.domain;
        if x.len() != dom.dim || y.len() != dom.dim {
            return invalid("point dimension does not match the domain");
        }
        let r = dist(x, y);
        if self.spec.variant == KernelVariant::QuasiDist && r == 0.0 {
            return Ok(0.0);
        }
        if r == 0.0 {
            return Err(Error::Singular("kernel evaluated at x = y".into()));
        }
        if !dom.is_interior(x) {
            return invalid("first argument must be interior");
        }
        if self.spec.variant.is_boundary_kernel() {
            if (norm(y) - 1.0).abs() > 1e-9 {
                return invalid("second argument must lie on the boundary sphere");
            }
        } else if !dom.is_interior(y) {
            return invalid("second argument must be interior");
        }
        let a = SiteGeom::of(dom, x);
        let mut b = SiteGeom::of(dom, y);
        if self.spec.variant.is_boundary_kernel() {
            b.d = 0.0;
        }
        Ok(self.eval_geom(r, a, b))
    }

    /// Both addends of the logarithmic Green estimate (the second is 0 on the
    /// power branch).
    pub fn green_parts(&self, r: f64, a: SiteGeom, b: SiteGeom) -> (f64, f64) {
        let m = green_min(r, a.d * b.d, self.n_minus_2);
        match self.branch {
            Branch::Log => {
                let first = m * pow((a.ds + r) * (b.ds + r) / (a.ds * b.ds), self.expo);
                let arg_max = (r * r).max(a.d * b.d);
                let second = a.d * b.d / pow(a.ds * b.ds, self.expo) * log_abs_of_inverse(arg_max);
                (first, second)
            }
            _ => {
                let sig = if self.expo == 0.0 { 1.0 } else { pow((a.ds + r) * (b.ds + r) / (a.ds * b.ds), self.expo) };
                (m * sig, 0.0)
            }
        }
    }

    /// Both addends of the logarithmic Martin estimate.
    pub fn martin_parts(&self, r: f64, a: SiteGeom) -> (f64, f64) {
        let base = a.d / pow(r, self.n);
        let sig = if self.expo == 0.0 { 1.0 } else { pow((a.ds + r) * (a.ds + r) / a.ds, self.expo) };
        match self.branch {
            Branch::Log => (base * sig, a.d / pow(a.ds, self.expo) * r.ln().abs()),
            _ => (base * sig, 0.0),
        }
    }

    /// Unchecked evaluation from distances. For boundary kernels `b` describes
    /// the boundary point (`b.d = 0`).
    #[inline]
    pub fn eval_geom(&self, r: f64, a: SiteGeom, b: SiteGeom) -> f64 {
        match self.spec.variant {
            KernelVariant::Green => {
                let (f, s) = self.green_parts(r, a, b);
                f + s
            }
            KernelVariant::Martin => {
                let (f, s) = self.martin_parts(r, a);
                f + s
            }
            KernelVariant::NAlpha => self.n_family(r, a, b, self.expo),
            KernelVariant::QuasiDist => {
                if r == 0.0 {
                    0.0
                } else {
                    1.0 / self.n_family(r, a, b, self.expo)
                }
            }
            KernelVariant::NNminusEps => self.n_family(r, a, b, self.expo),
            KernelVariant::NOneEps => {
                let m = r.max(a.d).max(b.d);
                self.n_family(r, a, b, self.n) + pow(m, -self.eps)
            }
            KernelVariant::GH2Eps => {
                let half = self.n / 2.0;
                let first = green_min(r, a.d * b.d, self.n_minus_2) * pow((a.ds * b.ds / (r * r)).min(1.0), -half);
                let m = r.max(a.d).max(b.d);
                first + a.d * b.d / pow(a.ds * b.ds, half) * pow(m, -self.eps)
            }
            KernelVariant::GTildeH2Eps => {
                let half = self.n / 2.0;
                a.d * b.d / pow(a.ds * b.ds, half) * self.n_family(r, a, b, self.expo)
            }
            KernelVariant::KH2Eps => a.d / pow(a.ds, self.n / 2.0) * self.n_family(r, a, b, self.expo),
        }
    }

    #[inline]
    fn n_family(&self, r: f64, a: SiteGeom, b: SiteGeom, alpha: f64) -> f64 {
        let top = r.max(a.ds).max(b.ds);
        let m = r.max(a.d).max(b.d);
        pow(top, alpha) / (r.powi(self.n_minus_2) * m * m)
    }

    /// `|S^{N-1}| ∫_0^ρ k(r) r^{N-1} dr` with both sites frozen at `a`: the
    /// kernel mass of an equivalent-volume cell around a quadrature point.
    pub fn cell_integral(&self, a: SiteGeom, rho: f64) -> f64 {
        if self.spec.variant.is_boundary_kernel() || rho <= 0.0 {
            return 0.0;
        }
        let dim = self.spec.domain.dim;
        let mut cuts = vec![rho];
        for &c in &[a.d, a.ds] {
            if c > 0.0 && c < rho {
                cuts.push(c);
            }
        }
        // geometric refinement toward r = 0
        let mut lo = rho;
        for _ in 0..60 {
            lo *= 0.5;
            cuts.push(lo);
        }
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.dedup();
        let (gx, gw) = gauss_legendre(12);
        let mut total = 0.0;
        let mut left = 0.0;
        for &right in &cuts {
            let h = 0.5 * (right - left);
            let c = 0.5 * (right + left);
            for (t, w) in gx.iter().zip(&gw) {
                let r = c + h * t;
                total += w * h * self.eval_geom(r, a, a) * r.powi(dim as i32 - 1);
            }
            left = right;
        }
        total * sphere_area(dim)
    }
}

#[inline]
fn green_min(r: f64, dd: f64, n_minus_2: i32) -> f64 {
    let base = r.powi(n_minus_2);
    (1.0 / base).min(dd / (base * r * r))
}

/// `|ln(1/m)|` for `m = max{r², d(x)d(y)}`, i.e. `|ln min{r^{-2}, (dd)^{-1}}|`.
#[inline]
fn log_abs_of_inverse(m: f64) -> f64 {
    (-m.max(1e-300).ln()).abs()
}

/// `1 / N_α(x, y)`; `0` when `x = y`.
pub fn quasi_dist(kernel: &Kernel, x: &[f64], y: &[f64]) -> Result<f64> {
    let r = dist(x, y);
    if r == 0.0 {
        return Ok(0.0);
    }
    let dom = kernel.domain();
    let a = SiteGeom::of(dom, x);
    let b = SiteGeom::of(dom, y);
    Ok(1.0 / kernel.n_family(r, a, b, kernel.expo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, k: usize, mu: f64) -> (DomainModel, SpectralParams) {
        let d = DomainModel::with_default_beta(n, k).unwrap();
        let p = SpectralParams::new(&d, mu).unwrap();
        (d, p)
    }

    #[test]
    fn green_is_symmetric() {
        let (d, p) = setup(3, 0, 2.0);
        let g = Kernel::new(KernelSpec::green(d, p)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = d.sample_interior(&mut rng);
            let y = d.sample_interior(&mut rng);
            let a = g.eval(&x, &y).unwrap();
            let b = g.eval(&y, &x).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs());
            assert!(a > 0.0);
        }
    }

    #[test]
    fn green_without_hardy_term() {
        let (d, p) = setup(3, 0, 0.0);
        let g = Kernel::new(KernelSpec::green(d, p)).unwrap();
        let x = [0.1, 0.2, 0.3];
        let y = [-0.4, 0.1, 0.5];
        let r = dist(&x, &y);
        let dd = d.d_boundary(&x) * d.d_boundary(&y);
        let expect = (1.0 / r).min(dd / r.powi(3));
        assert_relative_eq!(g.eval(&x, &y).unwrap(), expect, epsilon = 1e-14);
        assert!(matches!(g.eval(&x, &x), Err(Error::Singular(_))));
    }

    #[test]
    fn green_far_field_slope_is_minus_n() {
        // Points at depth δ, separation t ≫ δ: G ≈ δ² t^{-N}.
        let (d, p) = setup(3, 0, 0.0);
        let g = Kernel::new(KernelSpec::green(d, p)).unwrap();
        let delta = 1e-5;
        let (mut xs, mut ys) = (vec![], vec![]);
        for j in 0..8 {
            let t = 1e-3 * 2f64.powi(j);
            let th = t / (1.0 - delta);
            let x = [0.0, 0.0, -(1.0 - delta)];
            let y = [(1.0 - delta) * th.sin(), 0.0, -(1.0 - delta) * th.cos()];
            xs.push(dist(&x, &y).ln());
            ys.push(g.eval(&x, &y).unwrap().ln());
        }
        let (s, _) = crate::numerics::fit_line(&xs, &ys).unwrap();
        assert!((s + 3.0).abs() < 1e-3, "slope {s}");
    }

    #[test]
    fn branch_selection_is_total() {
        for (n, k, mu, want) in [
            (3, 0, 2.0, Branch::Power),
            (3, 0, 2.25, Branch::Log),
            (4, 1, 2.25, Branch::Power),
            (4, 0, 4.0, Branch::Log),
            (5, 2, -1.0, Branch::Power),
        ] {
            let (d, p) = setup(n, k, mu);
            let g = Kernel::new(KernelSpec::green(d, p)).unwrap();
            let m = Kernel::new(KernelSpec::martin(d, p)).unwrap();
            assert_eq!(g.branch(), want);
            assert_eq!(m.branch(), want);
        }
    }

    #[test]
    fn martin_examples() {
        let (d, p) = setup(3, 0, 0.0);
        let k = Kernel::new(KernelSpec::martin(d, p)).unwrap();
        let x = [0.2, -0.1, 0.3];
        let xi = [0.0, 1.0, 0.0];
        let expect = d.d_boundary(&x) / dist(&x, &xi).powi(3);
        assert_relative_eq!(k.eval(&x, &xi).unwrap(), expect, epsilon = 1e-14);
        // off-Σ boundary point, interior reference point: finite and positive
        let (d2, p2) = setup(3, 0, 2.0);
        let k2 = Kernel::new(KernelSpec::martin(d2, p2)).unwrap();
        let v = k2.eval(&[0.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]).unwrap();
        assert!(v.is_finite() && v > 0.0);
        assert!(k2.eval(&x, &[0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn martin_cone_slope() {
        // ξ ∈ Σ, x on the inward normal: K ~ t^{1 - N + α₋}.
        let (d, p) = setup(3, 0, 2.0);
        let k = Kernel::new(KernelSpec::martin(d, p)).unwrap();
        let xi = d.sigma_anchor();
        let (mut xs, mut ys) = (vec![], vec![]);
        for j in 6..20 {
            let t = 2f64.powi(-j);
            let x = [1.0 - t, 0.0, 0.0];
            xs.push(t.ln());
            ys.push(k.eval(&x, &xi).unwrap().ln());
        }
        let (s, _) = crate::numerics::fit_line(&xs, &ys).unwrap();
        assert!((s - (1.0 - 3.0 + 1.0)).abs() < 1e-3, "slope {s}");
    }

    #[test]
    fn n_alpha_hand_value_and_symmetry() {
        let (d, p) = setup(3, 0, 2.0);
        let k = Kernel::new(KernelSpec::n_alpha(d, p, 0.0)).unwrap();
        let x = [0.0, 0.0, 0.0];
        let y = [0.1, 0.0, 0.0];
        // r = 0.1 < d(x) = 1, d(y) = 0.9 -> 1 / (0.1 * 1²)
        assert_relative_eq!(k.eval(&x, &y).unwrap(), 10.0, epsilon = 1e-13);
        assert_eq!(quasi_dist(&k, &x, &x).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k2 = Kernel::new(KernelSpec::n_alpha(d, p, 2.0 * p.alpha_minus)).unwrap();
        for _ in 0..10_000 {
            let x = d.sample_interior(&mut rng);
            let y = d.sample_interior(&mut rng);
            assert_eq!(k2.eval(&x, &y).unwrap(), k2.eval(&y, &x).unwrap());
        }
        assert!(Kernel::new(KernelSpec::n_alpha(d, p, 3.5)).is_err());
    }

    #[test]
    fn green_comparable_to_weighted_n_alpha() {
        let (d, p) = setup(3, 0, 2.0);
        let g = Kernel::new(KernelSpec::green(d, p)).unwrap();
        let n = Kernel::new(KernelSpec::n_alpha(d, p, 2.0 * p.alpha_minus)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for _ in 0..10_000 {
            let x = d.sample_at_depth(rand::Rng::random::<f64>(&mut rng).powi(3), &mut rng);
            let y = d.sample_at_depth(rand::Rng::random::<f64>(&mut rng).powi(3), &mut rng);
            let phi = |z: &[f64]| d.phi_surrogate(&p, z).unwrap();
            let ratio = g.eval(&x, &y).unwrap() / (phi(&x) * phi(&y) * n.eval(&x, &y).unwrap());
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        assert!(lo > 0.0 && hi / lo < 1e3, "ratio range [{lo}, {hi}]");
    }

    #[test]
    fn eps_chain_and_symmetry() {
        let (d, p) = setup(3, 0, 2.25);
        let eps = 0.5;
        let g = Kernel::new(KernelSpec::green(d, p)).unwrap();
        let ge = Kernel::new(KernelSpec::eps(d, p, KernelVariant::GH2Eps, eps)).unwrap();
        let gt = Kernel::new(KernelSpec::eps(d, p, KernelVariant::GTildeH2Eps, eps)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mut c1, mut c2) = (0.0f64, 0.0f64);
        for _ in 0..10_000 {
            let x = d.sample_interior(&mut rng);
            let y = d.sample_interior(&mut rng);
            let a = g.eval(&x, &y).unwrap();
            let b = ge.eval(&x, &y).unwrap();
            let c = gt.eval(&x, &y).unwrap();
            c1 = c1.max(a / b);
            c2 = c2.max(b / c);
        }
        assert!(c1 < 50.0 && c2 < 50.0, "chain constants {c1} {c2}");
        for v in [KernelVariant::NOneEps, KernelVariant::NNminusEps, KernelVariant::GH2Eps, KernelVariant::GTildeH2Eps]
        {
            let k = Kernel::new(KernelSpec::eps(d, p, v, eps)).unwrap();
            let x = [0.3, 0.1, -0.2];
            let y = [0.5, -0.4, 0.1];
            assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
        }
    }

    #[test]
    fn eps_regime_is_enforced() {
        let (d, p) = setup(3, 0, 2.0);
        assert!(Kernel::new(KernelSpec::eps(d, p, KernelVariant::GH2Eps, 0.5)).is_err());
        let (d, p) = setup(4, 1, 2.25);
        assert!(Kernel::new(KernelSpec::eps(d, p, KernelVariant::GH2Eps, 0.5)).is_err());
        let (d, p) = setup(3, 0, 2.25);
        assert!(Kernel::new(KernelSpec::eps(d, p, KernelVariant::GH2Eps, 2.5)).is_err());
    }

    #[test]
    fn eps_factor_tends_to_one() {
        let m: f64 = 0.3;
        let vals: Vec<f64> = [1.0, 0.1, 0.01, 0.001].iter().map(|e| m.powf(-e)).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!((vals[3] - 1.0).abs() < 2e-3);
    }

    #[test]
    fn cell_integral_matches_newtonian_ball() {
        let (d, p) = setup(3, 0, 0.0);
        let g = Kernel::new(KernelSpec::green(d, p)).unwrap();
        let a = SiteGeom { d: 0.5, ds: 1.0 };
        let rho = 0.01;
        // deep point: kernel is |x-y|^{-1}, ∫_{B_ρ} = 4π ρ²/2
        let v = g.cell_integral(a, rho);
        assert_relative_eq!(v, 2.0 * std::f64::consts::PI * rho * rho, max_relative = 1e-10);
    }
}
