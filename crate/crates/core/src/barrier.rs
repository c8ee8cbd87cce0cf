//! Local barrier supersolutions near boundary points close to `Σ`, their
//! finite-difference certification, and Keller–Osserman constant fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cloud::Field;
use crate::error::{invalid, Error, Result};
use crate::geometry::{random_unit_vector, DomainModel, SpectralParams};
use crate::numerics::{dist, dot, norm};
use crate::report::CheckReport;

/// Projection strip half-width `β₁` of the ball.
pub const BETA1: f64 = 0.5;
/// Largest `Λ` tried by the doubling search.
pub const LAMBDA_MAX: f64 = 1_152_921_504_606_846_976.0; // 2^60
/// Largest fraction of probes allowed to violate the inequality.
pub const VIOLATION_FRACTION: f64 = 1e-3;
/// Multiple of the estimated truncation error tolerated at a probe.
pub const TRUNCATION_FACTOR: f64 = 2.0;

/// `β₂ = min(β₁, β₀) / 16`.
pub fn beta2(domain: &DomainModel) -> f64 {
    BETA1.min(domain.beta0) / 16.0
}

/// `d_z(x) = sqrt(d_∂Ω(x)² + |σ(x) - z|²)` with `σ(x) = x/|x|`.
pub fn dz_distance(domain: &DomainModel, x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != domain.dim || z.len() != domain.dim {
        return invalid("point dimension does not match the domain");
    }
    if (norm(z) - 1.0).abs() > 1e-9 {
        return invalid("z must lie on the boundary sphere");
    }
    let r = norm(x);
    let d = 1.0 - r;
    if !(d >= 0.0 && d < domain.beta0) || r == 0.0 {
        return Err(Error::Domain(format!("d_∂Ω = {d} outside the projection strip [0, {})", domain.beta0)));
    }
    let s: Vec<f64> = x.iter().map(|v| v / r).collect();
    let t = dist(&s, z);
    Ok((d * d + t * t).sqrt())
}

/// Smallest admissible `b`: `(2(p+1) - 2(p-1) min(γ, 0)) / (p - 1)`.
pub fn b_min(p: f64, gamma: f64) -> f64 {
    (2.0 * (p + 1.0) - 2.0 * (p - 1.0) * gamma.min(0.0)) / (p - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierSpec {
    pub z: Vec<f64>,
    pub radius: f64,
    /// Scale `R₀` with `R ≤ R₀ ≤ β₂`.
    pub r0: f64,
    pub gamma: f64,
    pub b: f64,
    pub m: f64,
    pub lambda: f64,
    /// `μ = H²`: exponent `H` and the square-root log factor.
    pub log_case: bool,
}

impl BarrierSpec {
    /// `z = e₁`, `R₀ = β₂`, `R = β₂/2`, `γ = H`, `b = b₀ + 1`,
    /// `M = -(N-1)` (the curvature bound of the sphere), `Λ = 1`.
    pub fn standard(domain: &DomainModel, params: &SpectralParams, p: f64) -> Self {
        let r0 = beta2(domain);
        let gamma = params.h;
        Self {
            z: domain.sigma_anchor(),
            radius: r0 / 2.0,
            r0,
            gamma,
            b: b_min(p, gamma) + 1.0,
            m: -(domain.dim as f64 - 1.0),
            lambda: 1.0,
            log_case: params.critical,
        }
    }

    pub fn validate(&self, domain: &DomainModel, params: &SpectralParams, p: f64) -> Result<()> {
        if !(p > 1.0) {
            return invalid(format!("barrier exponent must exceed 1, got {p}"));
        }
        if self.z.len() != domain.dim || (norm(&self.z) - 1.0).abs() > 1e-9 {
            return invalid("barrier center must lie on the boundary sphere");
        }
        if domain.d_sigma(&self.z) > self.r0 {
            return invalid("barrier center is farther than R₀ from Σ");
        }
        if !(self.r0 > 0.0 && self.r0 <= beta2(domain) && self.radius > 0.0 && self.radius <= self.r0) {
            return invalid(format!("need 0 < R ≤ R₀ ≤ β₂ = {}", beta2(domain)));
        }
        if self.log_case != params.critical {
            return invalid("log flag must match μ = H²");
        }
        if !self.log_case && !(self.gamma > params.alpha_minus && self.gamma < params.alpha_plus) {
            return invalid(format!("γ = {} outside ({}, {})", self.gamma, params.alpha_minus, params.alpha_plus));
        }
        if !(self.m < 0.0) {
            return invalid("M must be negative");
        }
        let b0 = b_min(p, self.exponent());
        if !(self.b > b0) {
            return invalid(format!("b = {} must exceed b₀ = {b0}", self.b));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return invalid("Λ must be positive");
        }
        Ok(())
    }

    fn exponent(&self) -> f64 {
        self.gamma
    }
}

/// An evaluable barrier `w` on `𝔅(z, R) ∩ Ω`.
#[derive(Debug, Clone, Serialize)]
pub struct Barrier {
    pub spec: BarrierSpec,
    pub p: f64,
    pub mu: f64,
    #[serde(skip)]
    domain: DomainModel,
    /// `(Λ, violating fraction)` of each search step.
    pub search: Vec<(f64, f64)>,
}

impl Barrier {
    pub fn new(domain: &DomainModel, params: &SpectralParams, p: f64, spec: BarrierSpec) -> Result<Self> {
        spec.validate(domain, params, p)?;
        Ok(Self { spec, p, mu: params.mu, domain: *domain, search: Vec::new() })
    }

    pub fn domain(&self) -> &DomainModel {
        &self.domain
    }

    /// `ln w` from the boundary coordinates `(σ, t)` of `x = (1 - t)σ`;
    /// `None` outside `𝔅(z, R)`.
    pub fn ln_value_at(&self, sigma: &[f64], t: f64) -> Option<f64> {
        let s = &self.spec;
        let dz2 = t * t + dist(sigma, &s.z).powi(2);
        let gap = s.radius * s.radius - dz2;
        if !(gap > 0.0 && t > 0.0) {
            return None;
        }
        let geo = self.sigma_geodesic(sigma);
        let dt = (geo * geo + t * t).sqrt();
        let mut lw = s.lambda.ln() - s.b * gap.ln() + s.m * t + t.ln() - s.gamma * dt.ln();
        if s.log_case {
            lw += 0.5 * (dt / (16.0 * s.r0)).ln().abs().ln();
        }
        Some(lw)
    }

    fn sigma_geodesic(&self, sigma: &[f64]) -> f64 {
        let k = self.domain.sigma_dim;
        let c = if k == 0 { sigma[0] } else { norm(&sigma[..k + 1]) };
        c.clamp(-1.0, 1.0).acos()
    }

    /// `ln w(x)`; `None` outside `𝔅(z, R) ∩ Ω`.
    pub fn ln_value(&self, x: &[f64]) -> Option<f64> {
        let r = norm(x);
        if !(r > 0.0 && r < 1.0) {
            return None;
        }
        let sigma: Vec<f64> = x.iter().map(|v| v / r).collect();
        self.ln_value_at(&sigma, 1.0 - r)
    }

    /// `w(x)`, `+∞` outside `𝔅(z, R) ∩ Ω`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.ln_value(x).map_or(f64::INFINITY, f64::exp)
    }

    /// `w / W̃` at `x = (1 - t)σ`, from the boundary coordinates so that
    /// depths below the float resolution of `|x|` stay meaningful.
    pub fn weight_ratio_at(&self, params: &SpectralParams, sigma: &[f64], t: f64) -> Option<f64> {
        let lw = self.ln_value_at(sigma, t)?;
        let geo = self.sigma_geodesic(sigma);
        let dt = (geo * geo + t * t).sqrt();
        let ds = self.domain.d_sigma(sigma).max(dt / 2.0);
        let wt = self.domain.weight_w_tilde_from(params, t, dt, ds).ok()?;
        Some((lw - wt.ln()).exp())
    }

    /// `(-L_μ w + w^p) / w` and the scale of its terms, by central
    /// differences of step `h`, all relative to `w(x)`.
    fn normalized_residual(&self, x: &[f64], h: f64) -> Option<Residual> {
        let l0 = self.ln_value(x)?;
        let lap = |h: f64| -> Option<f64> {
            let mut y = x.to_vec();
            let mut acc = 0.0;
            for i in 0..x.len() {
                for sgn in [1.0, -1.0] {
                    y[i] = x[i] + sgn * h;
                    acc += (self.ln_value(&y)? - l0).exp() - 1.0;
                }
                y[i] = x[i];
            }
            Some(acc / (h * h))
        };
        let lh = lap(h)?;
        let l2h = lap(2.0 * h)?;
        let ds = self.domain.d_sigma(x);
        let pot = self.mu / (ds * ds);
        let nonlinear = ((self.p - 1.0) * l0).exp();
        Some(Residual {
            linear: -lh - pot,
            value: -lh - pot + nonlinear,
            scale: lh.abs() + pot + nonlinear,
            // Richardson estimate of the truncation error of the h-Laplacian
            truncation: (l2h - lh).abs() / 3.0,
        })
    }
}

/// Normalized residual terms at one probe.
#[derive(Debug, Clone, Copy)]
struct Residual {
    linear: f64,
    value: f64,
    scale: f64,
    truncation: f64,
}

/// Step rule for the finite-difference check: `h = rel · min(d_∂Ω, d_Σ, R - d_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdPolicy {
    pub rel: f64,
}

impl Default for FdPolicy {
    fn default() -> Self {
        Self { rel: 1.0 / 16.0 }
    }
}

/// Probes in `𝔅(z, R) ∩ Ω`, log-graded in depth.
pub fn barrier_probes(barrier: &Barrier, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let dom = barrier.domain;
    let s = &barrier.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // tangent offset in the cap, depth log-uniform over four decades
        let mut v = random_unit_vector(dom.dim, &mut rng);
        let c = dot(&v, &s.z);
        v.iter_mut().zip(&s.z).for_each(|(a, b)| *a -= c * b);
        let vn = norm(&v);
        if vn < 1e-12 {
            continue;
        }
        let off = s.radius * rng.random::<f64>().powf(1.0 / (dom.dim as f64 - 1.0));
        let ang = off.min(std::f64::consts::PI);
        let (sa, ca) = ang.sin_cos();
        let sigma: Vec<f64> = s.z.iter().zip(&v).map(|(a, b)| ca * a + sa * b / vn).collect();
        let t = s.radius * 10f64.powf(-4.0 * rng.random::<f64>());
        if t * t + dist(&sigma, &s.z).powi(2) < s.radius * s.radius {
            out.push(sigma.iter().map(|a| (1.0 - t) * a).collect());
        }
    }
    out
}

/// Finite-difference outcome at one step size.
#[derive(Debug, Clone, Serialize)]
pub struct FdPass {
    pub rel_step: f64,
    pub probes: usize,
    pub discarded: usize,
    /// Probes with residual below minus the truncation allowance.
    pub violations: usize,
    pub violating_fraction: f64,
    /// Largest `max(0, -r) / scale` without allowance.
    pub worst_raw: f64,
    /// Probes where `-L_μ w < 0`, i.e. where the nonlinear term is needed.
    pub linear_negative: usize,
    /// Median relative truncation estimate of the Laplacian.
    pub median_truncation: f64,
}

fn fd_pass(barrier: &Barrier, probes: &[Vec<f64>], policy: FdPolicy) -> FdPass {
    let s = &barrier.spec;
    let dom = barrier.domain;
    let rows: Vec<Option<Residual>> = probes
        .par_iter()
        .map(|x| {
            let d = dom.d_boundary(x);
            let ds = dom.d_sigma(x);
            let dz = dz_distance(&dom, x, &s.z).ok()?;
            let h = policy.rel * d.min(ds).min(s.radius - dz);
            if !(h > 1e-13 * norm(x).max(1e-300)) {
                return None;
            }
            barrier.normalized_residual(x, h)
        })
        .collect();
    let mut out = FdPass {
        rel_step: policy.rel,
        probes: 0,
        discarded: 0,
        violations: 0,
        violating_fraction: 0.0,
        worst_raw: 0.0,
        linear_negative: 0,
        median_truncation: 0.0,
    };
    let mut truncs = Vec::new();
    for r in rows {
        match r {
            Some(r) if r.value.is_finite() && r.scale.is_finite() => {
                out.probes += 1;
                if r.value < -TRUNCATION_FACTOR * r.truncation {
                    out.violations += 1;
                }
                out.worst_raw = out.worst_raw.max((-r.value).max(0.0) / r.scale);
                if r.linear < 0.0 {
                    out.linear_negative += 1;
                }
                truncs.push(r.truncation / r.scale);
            }
            _ => out.discarded += 1,
        }
    }
    truncs.sort_by(f64::total_cmp);
    out.median_truncation = truncs.get(truncs.len() / 2).copied().unwrap_or(0.0);
    if out.probes > 0 {
        out.violating_fraction = out.violations as f64 / out.probes as f64;
    }
    out
}

/// Supersolution test of `-Δw - μw/d_Σ² + w^p ≥ 0` at `n_probe` points, at
/// steps `h` and `h/2`.
pub fn verify_supersolution(barrier: &Barrier, n_probe: usize, policy: FdPolicy, seed: u64) -> Result<CheckReport> {
    if n_probe == 0 {
        return invalid("need at least one probe");
    }
    if !(policy.rel > 0.0 && policy.rel <= 0.25) {
        return invalid("relative FD step must lie in (0, 1/4]");
    }
    let probes = barrier_probes(barrier, n_probe, seed);
    let coarse = fd_pass(barrier, &probes, policy);
    let fine = fd_pass(barrier, &probes, FdPolicy { rel: policy.rel / 2.0 });
    if coarse.probes == 0 {
        return Err(Error::Inconclusive("every probe was discarded".into()));
    }
    let shrink = if fine.worst_raw > 0.0 {
        coarse.worst_raw / fine.worst_raw
    } else if coarse.worst_raw > 0.0 {
        f64::INFINITY
    } else {
        f64::NAN
    };
    let trunc_shrink = coarse.median_truncation / fine.median_truncation;
    let mut rep = CheckReport::new("supersolution");
    rep.value("lambda", barrier.spec.lambda)
        .value("probes", coarse.probes as f64)
        .value("discarded", coarse.discarded as f64)
        .value("violating_fraction", coarse.violating_fraction)
        .value("violating_fraction_half_step", fine.violating_fraction)
        .value("worst_raw", coarse.worst_raw)
        .value("worst_raw_half_step", fine.worst_raw)
        .value("shrink_factor", shrink)
        .value("truncation_shrink_factor", trunc_shrink)
        .value("linear_part_negative", coarse.linear_negative as f64);
    let shrinking = if shrink.is_nan() {
        rep.note("no negative residual at either step; step refinement holds vacuously");
        true
    } else {
        shrink >= 3.0
    };
    rep.pass = coarse.violating_fraction < VIOLATION_FRACTION
        && fine.violating_fraction <= coarse.violating_fraction
        && shrinking;
    Ok(rep)
}

/// Search options for [`build_barrier`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSearch {
    pub n_probe: usize,
    pub policy: FdPolicy,
    pub seed: u64,
}

impl Default for BarrierSearch {
    fn default() -> Self {
        Self { n_probe: 20_000, policy: FdPolicy::default(), seed: 0 }
    }
}

/// Fix `Λ` as the smallest power of two (from `spec.lambda`) for which the
/// supersolution test passes.
pub fn build_barrier(
    domain: &DomainModel,
    params: &SpectralParams,
    p: f64,
    spec: BarrierSpec,
    search: BarrierSearch,
) -> Result<(Barrier, CheckReport)> {
    let mut barrier = Barrier::new(domain, params, p, spec)?;
    let mut worst = String::new();
    while barrier.spec.lambda <= LAMBDA_MAX {
        let rep = verify_supersolution(&barrier, search.n_probe, search.policy, search.seed)?;
        let frac = rep.get("violating_fraction").unwrap_or(1.0);
        barrier.search.push((barrier.spec.lambda, frac));
        if rep.pass {
            return Ok((barrier, rep));
        }
        worst = format!("Λ = {:e}: violating fraction {frac:e}", barrier.spec.lambda);
        barrier.spec.lambda *= 2.0;
    }
    Err(Error::NoConvergence {
        iterations: barrier.search.len(),
        detail: format!("Λ search exceeded 2^60; last {worst}"),
    })
}

/// `w / W̃` along `n_seq` sequences approaching boundary points of
/// `𝔅(z, R)` off `Σ`; returns the ratio at the closest sample of each.
pub fn boundary_ratios(barrier: &Barrier, params: &SpectralParams, n_seq: usize, seed: u64) -> Vec<f64> {
    let s = &barrier.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = barrier_probes(barrier, n_seq * 4, rng.random());
    probes
        .iter()
        .filter_map(|x| {
            let r = norm(x);
            let sigma: Vec<f64> = x.iter().map(|v| v / r).collect();
            (barrier.domain.d_sigma(&sigma) > 0.1 * s.radius && dist(&sigma, &s.z) < 0.9 * s.radius).then_some(sigma)
        })
        .take(n_seq)
        .map(|sigma| {
            let ts = (1..=300).map(|j| s.radius * 10f64.powf(-(j as f64) / 2.0));
            ts.filter_map(|t| barrier.weight_ratio_at(params, &sigma, t)).next_back().unwrap_or(f64::NAN)
        })
        .collect()
}

/// Fitted Keller–Osserman constants of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KoConstants {
    /// `max u d_∂Ω^{2/(p-1)}`.
    pub uniform: f64,
    /// `max u / (d_∂Ω d_Σ^{-α₋} d_F^{α₋-1-2/(p-1)})` with `F = {f}`.
    pub refined: Option<f64>,
}

pub fn ko_constants(u: &Field, p: f64, params: &SpectralParams, f: Option<&[f64]>) -> Result<KoConstants> {
    if !(p > 1.0) {
        return invalid(format!("exponent must exceed 1, got {p}"));
    }
    if u.values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("field contains NaN".into()));
    }
    let c = &u.cloud;
    let e = 2.0 / (p - 1.0);
    let am = params.alpha_minus;
    let mut uniform: f64 = 0.0;
    let mut refined: f64 = 0.0;
    for i in 0..c.len() {
        let g = c.geom(i);
        let v = u.values[i];
        uniform = uniform.max(v * g.d.powf(e));
        if let Some(fp) = f {
            let df = dist(c.point(i), fp);
            refined = refined.max(v / (g.d * g.ds.powf(-am) * df.powf(am - 1.0 - e)));
        }
    }
    Ok(KoConstants { uniform, refined: f.map(|_| refined) })
}

/// Compare the fitted constants of two resolutions of the same solution.
pub fn ko_check(
    coarse: &Field,
    fine: &Field,
    p: f64,
    params: &SpectralParams,
    f: Option<&[f64]>,
) -> Result<CheckReport> {
    let a = ko_constants(coarse, p, params, f)?;
    let b = ko_constants(fine, p, params, f)?;
    let stable =
        |x: f64, y: f64| x.is_finite() && y.is_finite() && (x == y || (y - x).abs() <= 0.25 * x.abs().max(y.abs()));
    let mut rep = CheckReport::new("keller_osserman");
    rep.value("exponent", -2.0 / (p - 1.0)).value("c_uniform", a.uniform).value("c_uniform_refined_cloud", b.uniform);
    rep.pass = stable(a.uniform, b.uniform);
    if let (Some(x), Some(y)) = (a.refined, b.refined) {
        rep.value("c_local", x).value("c_local_refined_cloud", y);
        rep.pass &= stable(x, y);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize, k: usize, mu: f64) -> (DomainModel, SpectralParams) {
        let d = DomainModel::with_default_beta(n, k).unwrap();
        (d, SpectralParams::new(&d, mu).unwrap())
    }

    #[test]
    fn dz_on_normal_and_at_center() {
        let (d, _) = setup(3, 0, 2.0);
        let z = d.sigma_anchor();
        assert!((dz_distance(&d, &[0.97, 0.0, 0.0], &z).unwrap() - 0.03).abs() < 1e-15);
        assert_eq!(dz_distance(&d, &z, &z).unwrap(), 0.0);
        assert!(dz_distance(&d, &[0.5, 0.0, 0.0], &z).is_err());
    }

    #[test]
    fn dz_sandwich() {
        let (d, _) = setup(4, 1, 1.0);
        let z = d.sigma_anchor();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20_000 {
            let x = d.sample_at_depth(d.beta0 * rng.random::<f64>(), &mut rng);
            let dz = dz_distance(&d, &x, &z).unwrap();
            let e = dist(&x, &z);
            assert!(0.5 * e <= dz && dz <= 5f64.sqrt() * e);
        }
    }

    #[test]
    fn spec_constraints() {
        let (d, p) = setup(3, 0, 2.0);
        let s = BarrierSpec::standard(&d, &p, 2.0);
        assert!(s.validate(&d, &p, 2.0).is_ok());
        assert_eq!(b_min(2.0, 1.5), 6.0);
        let bad = BarrierSpec { gamma: p.alpha_minus, ..s.clone() };
        assert!(bad.validate(&d, &p, 2.0).is_err());
        let bad = BarrierSpec { b: 6.0, ..s.clone() };
        assert!(bad.validate(&d, &p, 2.0).is_err());
        let bad = BarrierSpec { m: 0.0, ..s };
        assert!(bad.validate(&d, &p, 2.0).is_err());
    }

    #[test]
    fn lambda_is_linear_and_rim_blows_up() {
        let (d, p) = setup(3, 0, 2.0);
        let s = BarrierSpec::standard(&d, &p, 2.0);
        let w1 = Barrier::new(&d, &p, 2.0, s.clone()).unwrap();
        let w2 = Barrier::new(&d, &p, 2.0, BarrierSpec { lambda: 2.0, ..s.clone() }).unwrap();
        let x = [1.0 - s.radius / 4.0, 0.0, 0.0];
        assert!((w2.value(&x) / w1.value(&x) - 2.0).abs() < 1e-12);
        let mut last = 0.0;
        for j in 1..8 {
            let t = s.radius * (1.0 - 10f64.powi(-j));
            let v = w1.value(&[1.0 - t, 0.0, 0.0]);
            assert!(v > last);
            last = v;
        }
        assert_eq!(w1.value(&[0.5, 0.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn zero_field_has_zero_constant() {
        use crate::cloud::{make_cloud, Grading};
        use std::sync::Arc;
        let (d, p) = setup(3, 0, 2.0);
        let c = Arc::new(make_cloud(&d, 1500, Grading::default(), 3).unwrap());
        let u = Field::zeros(c);
        let k = ko_constants(&u, 2.0, &p, Some(&d.sigma_anchor())).unwrap();
        assert_eq!(k.uniform, 0.0);
        assert_eq!(k.refined, Some(0.0));
    }
}
