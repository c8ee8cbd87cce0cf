//! Sampling checks of the quasi-metric, ball-volume and doubling properties
//! of `d(x, y) = 1 / N_α(x, y)` and `dω = d_∂Ω^b d_Σ^θ dx`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{random_unit_vector, DomainModel, SpectralParams};
use crate::kernels::{Kernel, KernelSpec, SiteGeom};
use crate::numerics::{dist, fit_line, norm};
use crate::operators::check_density_exponents;
use crate::polar::{polar_nodes, PolarSpec};
use crate::report::CheckReport;

/// Relative change of a sampled maximum allowed when the sample doubles.
pub const STABILITY_TOLERANCE: f64 = 0.2;
/// Largest admissible growth of a sampled supremum when the sample doubles.
pub const BOUNDED_GROWTH: f64 = 2.0;
/// Relative slope tolerance of the volume-regime fits.
pub const SLOPE_TOLERANCE: f64 = 0.1;

/// Interior point whose depth and distance to `Σ` are log-uniform over
/// several decades, with probability 1/2, and uniform in the ball otherwise.
pub fn sample_graded<R: Rng + ?Sized>(domain: &DomainModel, rng: &mut R) -> Vec<f64> {
    if rng.random::<bool>() {
        return domain.sample_interior(rng);
    }
    let depth = 10f64.powf(-4.0 * rng.random::<f64>());
    let mut xi = domain.sigma_anchor();
    if domain.sigma_dim > 0 {
        let mut along = random_unit_vector(domain.sigma_dim + 1, rng);
        along.resize(domain.dim, 0.0);
        xi = along;
    }
    // tilt away from Σ by a log-uniform angle
    let angle = std::f64::consts::PI * 10f64.powf(-4.0 * rng.random::<f64>());
    let mut t = random_unit_vector(domain.dim, rng);
    let c: f64 = t.iter().zip(&xi).map(|(a, b)| a * b).sum();
    t.iter_mut().zip(&xi).for_each(|(a, b)| *a -= c * b);
    let tn = norm(&t);
    let r = 1.0 - depth.min(0.99);
    let (s, co) = angle.sin_cos();
    xi.iter().zip(&t).map(|(a, b)| r * (co * a + s * b / tn)).collect()
}

fn quasi_kernel(domain: &DomainModel, params: &SpectralParams, alpha: f64) -> Result<Kernel> {
    if alpha > domain.dim as f64 {
        return invalid(format!("alpha = {alpha} exceeds N"));
    }
    Kernel::new(KernelSpec::n_alpha(*domain, *params, alpha))
}

#[inline]
fn qd(kernel: &Kernel, x: &[f64], y: &[f64], gx: SiteGeom, gy: SiteGeom) -> f64 {
    let r = dist(x, y);
    if r == 0.0 {
        0.0
    } else {
        1.0 / kernel.eval_geom(r, gx, gy)
    }
}

/// Largest `d(x,y) / (d(x,z) + d(z,y))` over `n` seeded triples.
pub fn max_triple_ratio(domain: &DomainModel, params: &SpectralParams, alpha: f64, n: usize, seed: u64) -> Result<f64> {
    let kernel = quasi_kernel(domain, params, alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples: Vec<[Vec<f64>; 3]> = (0..n)
        .map(|_| [sample_graded(domain, &mut rng), sample_graded(domain, &mut rng), sample_graded(domain, &mut rng)])
        .collect();
    Ok(triples
        .par_iter()
        .map(|[x, y, z]| {
            let (gx, gy, gz) = (SiteGeom::of(domain, x), SiteGeom::of(domain, y), SiteGeom::of(domain, z));
            let num = qd(&kernel, x, y, gx, gy);
            let den = qd(&kernel, x, z, gx, gz) + qd(&kernel, z, y, gz, gy);
            if num == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .reduce(|| 0.0, f64::max))
}

/// Quasi-metric inequality: the sampled constant is finite and stable when
/// the sample doubles.
pub fn check_quasimetric(
    domain: &DomainModel,
    params: &SpectralParams,
    alpha: f64,
    n_triples: usize,
    seed: u64,
) -> Result<CheckReport> {
    if n_triples == 0 {
        return invalid("need at least one triple");
    }
    let a = max_triple_ratio(domain, params, alpha, n_triples, seed)?;
    let b = max_triple_ratio(domain, params, alpha, 2 * n_triples, seed)?;
    let change = (b - a).abs() / a.max(f64::MIN_POSITIVE);
    let mut rep = CheckReport::new("quasimetric");
    rep.value("alpha", alpha)
        .value("triples", n_triples as f64)
        .value("max_ratio", a)
        .value("max_ratio_doubled", b)
        .value("relative_change", change);
    rep.pass = a.is_finite() && b.is_finite() && change < STABILITY_TOLERANCE;
    Ok(rep)
}

/// `∫_{B(x,s) ∩ Ω} d_∂Ω^b d_Σ^θ dy` on a local polar grid.
pub fn measure_ball(domain: &DomainModel, x: &[f64], s: f64, b: f64, theta: f64) -> Result<f64> {
    check_density_exponents(domain.dim, domain.sigma_dim, b, theta)?;
    if !domain.is_interior(x) || !(s > 0.0) {
        return invalid("measure_ball needs an interior center and s > 0");
    }
    let mut axis = vec![0.0; domain.dim];
    axis[0] = 1.0;
    let spec = PolarSpec {
        r_min: s * 1e-6,
        r_max: s,
        per_octave: 3,
        theta_max: std::f64::consts::PI,
        n_theta: 24,
        n_azimuth: if domain.dim == 3 { 24 } else { 64 },
        seed: 0,
    };
    let nodes = polar_nodes(x, &axis, &spec, |y| domain.is_interior(y));
    Ok((0..nodes.len())
        .map(|i| {
            let g = SiteGeom::of(domain, nodes.point(i));
            nodes.weights[i] * g.d.powf(b) * g.ds.powf(theta)
        })
        .sum())
}

/// Quadrature resolution of a [`QuasiBallProfile`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileResolution {
    pub r_min: f64,
    pub per_octave: usize,
    pub n_theta: usize,
    pub n_azimuth: usize,
}

impl ProfileResolution {
    /// Fine grid for slope fits.
    pub fn fine(dim: usize) -> Self {
        Self { r_min: 1e-12, per_octave: 4, n_theta: 32, n_azimuth: if dim == 3 { 16 } else { 48 } }
    }

    /// Cheap grid for many random centers.
    pub fn coarse(dim: usize) -> Self {
        Self { r_min: 1e-9, per_octave: 2, n_theta: 12, n_azimuth: if dim == 3 { 8 } else { 24 } }
    }
}

/// Cumulative `ω(𝔅(x, s))` for all `s`, from one polar grid about `x`.
#[derive(Debug, Clone)]
pub struct QuasiBallProfile {
    /// Sorted quasi-distances of the nodes.
    q: Vec<f64>,
    /// `Σ_{q_i ≤ q_j} w_i`.
    mass: Vec<f64>,
    /// `Σ_{q_i ≤ q_j} w_i / q_i`.
    inv: Vec<f64>,
}

impl QuasiBallProfile {
    pub fn new(
        domain: &DomainModel,
        kernel: &Kernel,
        x: &[f64],
        b: f64,
        theta: f64,
        res: ProfileResolution,
    ) -> Result<Self> {
        if !domain.is_interior(x) {
            return invalid("profile center must be interior");
        }
        let mut axis = vec![0.0; domain.dim];
        axis[0] = 1.0;
        let spec = PolarSpec {
            r_min: res.r_min,
            r_max: 2.0,
            per_octave: res.per_octave,
            theta_max: std::f64::consts::PI,
            n_theta: res.n_theta,
            n_azimuth: res.n_azimuth,
            seed: 0,
        };
        let gx = SiteGeom::of(domain, x);
        let nodes = polar_nodes(x, &axis, &spec, |y| domain.is_interior(y));
        let mut pairs: Vec<(f64, f64)> = (0..nodes.len())
            .filter_map(|i| {
                let g = SiteGeom::of(domain, nodes.point(i));
                let w = nodes.weights[i] * g.d.powf(b) * g.ds.powf(theta);
                let q = 1.0 / kernel.eval_geom(nodes.radii[i], gx, g);
                (w > 0.0 && q.is_finite() && q > 0.0).then_some((q, w))
            })
            .collect();
        if pairs.is_empty() {
            return Err(Error::Inconclusive("no quadrature nodes in the domain".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut q = Vec::with_capacity(pairs.len());
        let mut mass = Vec::with_capacity(pairs.len());
        let mut inv = Vec::with_capacity(pairs.len());
        let (mut m, mut v) = (0.0, 0.0);
        for (qi, wi) in pairs {
            m += wi;
            v += wi / qi;
            q.push(qi);
            mass.push(m);
            inv.push(v);
        }
        Ok(Self { q, mass, inv })
    }

    fn count_below(&self, s: f64) -> usize {
        self.q.partition_point(|&v| v < s)
    }

    /// `ω(𝔅(x, s))`.
    pub fn volume(&self, s: f64) -> f64 {
        match self.count_below(s) {
            0 => 0.0,
            j => self.mass[j - 1],
        }
    }

    /// `∫_0^s ω(𝔅(x, t)) t^{-2} dt = Σ_{q_i < s} w_i (1/q_i - 1/s)`.
    pub fn integral(&self, s: f64) -> f64 {
        match self.count_below(s) {
            0 => 0.0,
            j => self.inv[j - 1] - self.mass[j - 1] / s,
        }
    }

    /// Smallest quasi-distance resolved by the grid.
    pub fn q_min(&self) -> f64 {
        self.q[0]
    }

    /// Largest quasi-distance from the center to the domain; the profile
    /// saturates beyond it.
    pub fn q_max(&self) -> f64 {
        self.q[self.q.len() - 1]
    }

    /// Node quasi-distances, ascending.
    pub fn quasi_distances(&self) -> &[f64] {
        &self.q
    }
}

/// Analytic breakpoints of the three volume regimes at `x`.
pub fn regime_breakpoints(domain: &DomainModel, x: &[f64], alpha: f64) -> (f64, f64, f64) {
    let n = domain.dim as f64;
    let g = SiteGeom::of(domain, x);
    let s1 = g.d.powf(n) * g.ds.powf(-alpha);
    let s2 = g.ds.powf(n - alpha);
    let m = 8f64.powf(n - alpha);
    (s1, s2, m)
}

/// Slope fit of `ω(𝔅(x, s))` within one regime.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeFit {
    pub regime: usize,
    pub s_lo: f64,
    pub s_hi: f64,
    pub scales: usize,
    pub slope: f64,
    pub expected: f64,
    /// Smallest and largest `ω(𝔅(x,s)) / s^{expected}` over the fitted scales.
    pub c_lower: f64,
    pub c_upper: f64,
    /// `c_upper / c_lower`.
    pub constant_spread: f64,
    pub pass: bool,
}

/// Fit the three regimes of the quasi-ball volume law. Regime 1 and 2 are
/// read off `x_inner`, regime 3 off `x_sigma`; a factor-2 margin is kept
/// around every breakpoint. The last regime ends where the quasi-ball
/// exhausts the domain, if that comes before `M`.
pub fn check_volume_regimes(
    domain: &DomainModel,
    params: &SpectralParams,
    alpha: f64,
    b: f64,
    theta: f64,
    x_inner: &[f64],
    x_sigma: &[f64],
) -> Result<(CheckReport, Vec<RegimeFit>)> {
    check_density_exponents(domain.dim, domain.sigma_dim, b, theta)?;
    if !(theta > -b - alpha) {
        return invalid("volume regimes need θ > -b - α");
    }
    let n = domain.dim as f64;
    let kernel = quasi_kernel(domain, params, alpha)?;
    let res = ProfileResolution::fine(domain.dim);
    let inner = QuasiBallProfile::new(domain, &kernel, x_inner, b, theta, res)?;
    let near = QuasiBallProfile::new(domain, &kernel, x_sigma, b, theta, res)?;
    let (a1, a2, _) = regime_breakpoints(domain, x_inner, alpha);
    let (_, c2, m) = regime_breakpoints(domain, x_sigma, alpha);
    let expected = [n / (n - 2.0), (b + n) / n, (b + theta + n) / (n - alpha)];
    let ranges = [
        (&inner, inner.q_min() * 4.0, a1 / 2.0),
        (&inner, a1 * 2.0, a2 / 2.0),
        (&near, c2 * 2.0, m.min(near.q_max()) / 2.0),
    ];
    let mut fits = Vec::new();
    let mut rep = CheckReport::new("volume_regimes");
    rep.value("alpha", alpha).value("b", b).value("theta", theta);
    for (i, (prof, lo, hi)) in ranges.iter().enumerate() {
        let fit = fit_regime(prof, *lo, *hi, expected[i], i + 1)?;
        rep.value(format!("slope_{}", i + 1), fit.slope).value(format!("expected_{}", i + 1), fit.expected);
        fits.push(fit);
    }
    rep.pass = fits.iter().all(|f| f.pass);
    Ok((rep, fits))
}

fn fit_regime(prof: &QuasiBallProfile, lo: f64, hi: f64, expected: f64, regime: usize) -> Result<RegimeFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    if lo > 0.0 && hi > lo {
        let steps = ((hi / lo).log2() * 2.0).floor().max(0.0) as usize;
        for j in 0..=steps {
            let s = lo * (hi / lo).powf(j as f64 / steps.max(1) as f64);
            let v = prof.volume(s);
            if v > 0.0 {
                xs.push(s.ln());
                ys.push(v.ln());
            }
        }
    }
    // scales are counted per octave
    let octaves = if xs.len() > 1 {
        ((xs[xs.len() - 1] - xs[0]) / std::f64::consts::LN_2).floor() as usize + 1
    } else {
        xs.len()
    };
    if octaves < 4 {
        return Err(Error::Inconclusive(format!("regime {regime} has only {octaves} usable scales")));
    }
    let (slope, _) = fit_line(&xs, &ys).ok_or_else(|| Error::Inconclusive("degenerate fit".into()))?;
    let consts: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (y - expected * x).exp()).collect();
    let cmax = consts.iter().cloned().fold(0.0, f64::max);
    let cmin = consts.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(RegimeFit {
        regime,
        s_lo: lo,
        s_hi: hi,
        scales: octaves,
        slope,
        expected,
        c_lower: cmin,
        c_upper: cmax,
        constant_spread: cmax / cmin,
        pass: (slope - expected).abs() <= SLOPE_TOLERANCE * expected.abs(),
    })
}

/// Largest `∫_0^{2r} / ∫_0^r` of `ω(𝔅(x,s)) s^{-2} ds` over `n` seeded `(x, r)`.
pub fn max_doubling_ratio(
    domain: &DomainModel,
    params: &SpectralParams,
    alpha: f64,
    b: f64,
    theta: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let kernel = quasi_kernel(domain, params, alpha)?;
    let samples = random_centers(domain, n, seed);
    let res = ProfileResolution::coarse(domain.dim);
    let ratios: Vec<f64> = samples
        .par_iter()
        .map(|(x, u)| -> Result<f64> {
            let prof = QuasiBallProfile::new(domain, &kernel, x, b, theta, res)?;
            let r = log_scale(&prof, *u);
            let lo = prof.integral(r);
            Ok(if lo > 0.0 { prof.integral(2.0 * r) / lo } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Largest `sup_{y ∈ 𝔅(x,r)} I(y, r) / I(x, r)` with
/// `I(x, r) = ∫_0^r ω(𝔅(x,s)) s^{-2} ds`, over `n` seeded `(x, r)` and
/// `per_ball` seeded points `y` of each ball.
#[allow(clippy::too_many_arguments)]
pub fn max_sup_ratio(
    domain: &DomainModel,
    params: &SpectralParams,
    alpha: f64,
    b: f64,
    theta: f64,
    n: usize,
    per_ball: usize,
    seed: u64,
) -> Result<f64> {
    let kernel = quasi_kernel(domain, params, alpha)?;
    let samples = random_centers(domain, n, seed);
    let res = ProfileResolution::coarse(domain.dim);
    let ratios: Vec<f64> = samples
        .par_iter()
        .enumerate()
        .map(|(idx, (x, u))| -> Result<f64> {
            let prof = QuasiBallProfile::new(domain, &kernel, x, b, theta, res)?;
            let r = log_scale(&prof, *u);
            let base = prof.integral(r);
            if base <= 0.0 {
                return Ok(0.0);
            }
            let gx = SiteGeom::of(domain, x);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut best: f64 = 1.0;
            let mut found = 0;
            let mut tries = 0;
            while found < per_ball && tries < 200 * per_ball {
                tries += 1;
                let y = sample_graded(domain, &mut rng);
                let near = sample_near(domain, x, &mut rng);
                for cand in [y, near] {
                    if found >= per_ball {
                        break;
                    }
                    let gy = SiteGeom::of(domain, &cand);
                    if qd(&kernel, x, &cand, gx, gy) < r {
                        found += 1;
                        let py = QuasiBallProfile::new(domain, &kernel, &cand, b, theta, res)?;
                        best = best.max(py.integral(r) / base);
                    }
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Interior point at a log-uniform distance from `x`.
fn sample_near<R: Rng + ?Sized>(domain: &DomainModel, x: &[f64], rng: &mut R) -> Vec<f64> {
    for _ in 0..64 {
        let t = 10f64.powf(-6.0 * rng.random::<f64>());
        let u = random_unit_vector(domain.dim, rng);
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + t * b).collect();
        if domain.is_interior(&y) {
            return y;
        }
    }
    x.to_vec()
}

fn random_centers(domain: &DomainModel, n: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (sample_graded(domain, &mut rng), rng.random::<f64>())).collect()
}

/// Radius at log-fraction `u` between the smallest resolved quasi-distance
/// and the diameter scale of the domain.
fn log_scale(prof: &QuasiBallProfile, u: f64) -> f64 {
    let lo = (prof.q_min() * 16.0).ln();
    let hi = prof.quasi_distances().last().copied().unwrap_or(1.0).ln();
    (lo + u * (hi - lo).max(0.0)).exp()
}

/// Conditions on `ω(𝔅)`: the doubling of the integrated profile over
/// `samples` balls and the sup comparison over `samples / 4` balls. Each
/// maximum must be finite and grow by less than [`BOUNDED_GROWTH`] when the
/// sample doubles (the doubled sample contains the original one).
pub fn check_doubling(
    domain: &DomainModel,
    params: &SpectralParams,
    alpha: f64,
    b: f64,
    theta: f64,
    samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    check_density_exponents(domain.dim, domain.sigma_dim, b, theta)?;
    let d1 = max_doubling_ratio(domain, params, alpha, b, theta, samples, seed)?;
    let d2 = max_doubling_ratio(domain, params, alpha, b, theta, 2 * samples, seed)?;
    let n_sup = (samples / 4).max(4);
    let s1 = max_sup_ratio(domain, params, alpha, b, theta, n_sup, 16, seed)?;
    let s2 = max_sup_ratio(domain, params, alpha, b, theta, 2 * n_sup, 16, seed)?;
    let bounded = |a: f64, b: f64| a.is_finite() && b.is_finite() && b < BOUNDED_GROWTH * a;
    let mut rep = CheckReport::new("doubling");
    rep.value("alpha", alpha)
        .value("b", b)
        .value("theta", theta)
        .value("doubling_max", d1)
        .value("doubling_max_doubled", d2)
        .value("sup_ratio_max", s1)
        .value("sup_ratio_max_doubled", s2);
    rep.pass = bounded(d1, d2) && bounded(s1, s2);
    Ok(rep)
}
