//! Integrability scans of `K_μ(·, z)^p φ` in a boundary cone at `z`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{DomainModel, SpectralParams};
use crate::kernels::{Kernel, KernelSpec, SiteGeom};
use crate::numerics::{dist, fit_line, norm, pairwise_sum};
use crate::polar::{polar_nodes, PolarSpec};
use crate::report::ext_f64;

/// Default cone aperture `ℓ`.
pub const DEFAULT_APERTURE: f64 = 0.5;
/// Exponent margin separating convergent, critical and divergent verdicts.
pub const VERDICT_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Convergent,
    Critical,
    Divergent,
}

impl Verdict {
    /// Classify a radial density exponent `e` of `∫_0 t^e dt`.
    pub fn from_exponent(e: f64) -> Self {
        if e < -1.0 - VERDICT_MARGIN {
            Verdict::Divergent
        } else if e <= -1.0 + VERDICT_MARGIN {
            Verdict::Critical
        } else {
            Verdict::Convergent
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Convergent => "convergent",
            Verdict::Critical => "critical",
            Verdict::Divergent => "divergent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSpec {
    pub p: f64,
    pub aperture: f64,
    /// Dyads `t_j = 2^{-j}`, `j = j_min..=j_max`.
    pub j_min: i32,
    pub j_max: i32,
}

impl ScanSpec {
    pub fn new(p: f64) -> Self {
        Self { p, aperture: DEFAULT_APERTURE, j_min: 3, j_max: 12 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    #[serde(with = "ext_f64")]
    pub p: f64,
    pub center: Vec<f64>,
    pub center_on_sigma: bool,
    pub aperture: f64,
    pub t: Vec<f64>,
    pub mass: Vec<f64>,
    /// Fitted slope of `log₂ A(t)` against `log₂ t`.
    pub mass_slope: f64,
    /// Radial density exponent `e` (`A(t) ~ t^{e+1}`).
    pub exponent: f64,
    /// Closed-form value of `e`.
    pub expected: f64,
    pub verdict: Verdict,
}

impl ScanReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("t,A\n");
        for (t, a) in self.t.iter().zip(&self.mass) {
            let _ = writeln!(s, "{t:e},{a:e}");
        }
        s
    }
}

/// Closed-form density exponent of `K^p φ` in the cone at `z`.
pub fn expected_exponent(domain: &DomainModel, params: &SpectralParams, p: f64, on_sigma: bool) -> f64 {
    let n = domain.dim as f64;
    if on_sigma {
        let a = params.alpha_minus;
        n - a - (n - a - 1.0) * p
    } else {
        n - (n - 1.0) * p
    }
}

/// Annular masses `A(t_j) = ∫_{cone, |x-z| ∈ [t_j, 2t_j]} K(x, z)^p φ(x) dx`
/// and the fitted exponent.
pub fn integrability_scan(
    domain: &DomainModel,
    params: &SpectralParams,
    z: &[f64],
    spec: &ScanSpec,
) -> Result<ScanReport> {
    if z.len() != domain.dim || (norm(z) - 1.0).abs() > 1e-9 {
        return invalid("scan center must lie on the boundary sphere");
    }
    if !(spec.aperture > 0.0 && spec.aperture < 1.0) {
        return invalid("cone aperture must lie in (0, 1)");
    }
    if !(spec.p > 0.0) {
        return invalid("exponent p must be positive");
    }
    let kernel = Kernel::new(KernelSpec::martin(*domain, *params))?;
    let on_sigma = domain.on_sigma(z, 1e-9);
    let zg = SiteGeom { d: 0.0, ds: domain.d_sigma(z) };
    let axis: Vec<f64> = z.iter().map(|v| -v).collect();
    let ell = spec.aperture;
    let am = params.alpha_minus;
    let mut ts = Vec::new();
    let mut masses = Vec::new();
    for j in spec.j_min..=spec.j_max {
        let t = 2f64.powi(-j);
        let ps = PolarSpec {
            r_min: t,
            r_max: 2.0 * t,
            per_octave: 8,
            // the exact cone is slightly curved; leave room for the indicator
            theta_max: (ell.acos() * 1.1).min(std::f64::consts::FRAC_PI_2),
            n_theta: 24,
            n_azimuth: if domain.dim == 3 { 16 } else { 48 },
            seed: j as u64,
        };
        let nodes = polar_nodes(z, &axis, &ps, |x| {
            let d = domain.d_boundary(x);
            d > 0.0 && d > ell * dist(x, z)
        });
        let terms: Vec<f64> = (0..nodes.len())
            .map(|i| {
                let x = nodes.point(i);
                let g = SiteGeom::of(domain, x);
                let k = kernel.eval_geom(nodes.radii[i], g, zg);
                nodes.weights[i] * k.powf(spec.p) * g.d * g.ds.powf(-am)
            })
            .collect();
        let a = pairwise_sum(&terms);
        if a.is_finite() && a > 0.0 {
            ts.push(t);
            masses.push(a);
        }
    }
    if ts.len() < 4 {
        return Err(Error::Inconclusive(format!("only {} usable dyads", ts.len())));
    }
    let lx: Vec<f64> = ts.iter().map(|t| t.log2()).collect();
    let ly: Vec<f64> = masses.iter().map(|a| a.log2()).collect();
    let (slope, _) = fit_line(&lx, &ly).ok_or_else(|| Error::Inconclusive("degenerate fit".into()))?;
    let exponent = slope - 1.0;
    Ok(ScanReport {
        p: spec.p,
        center: z.to_vec(),
        center_on_sigma: on_sigma,
        aperture: ell,
        t: ts,
        mass: masses,
        mass_slope: slope,
        exponent,
        expected: expected_exponent(domain, params, spec.p, on_sigma),
        verdict: Verdict::from_exponent(exponent),
    })
}
