//! Model domain (unit ball with a great-subsphere singular set), spectral
//! parameters of the Hardy operator, and the reference weights.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, fit_line, norm, smoothstep5};
use crate::report::ext_f64;

/// Default cutoff scale.
pub const DEFAULT_BETA0: f64 = 0.25;

/// Unit ball in `R^N` whose boundary carries the singular set `Σ`.
///
/// For `k >= 1`, `Σ = ∂B ∩ {x_{k+2} = … = x_N = 0}` is a great `k`-sphere;
/// `k = N-1` makes `Σ = ∂B`. For `k = 0`, `Σ` is the north pole `e_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainModel {
    pub dim: usize,
    pub sigma_dim: usize,
    pub beta0: f64,
}

impl DomainModel {
    pub fn new(dim: usize, sigma_dim: usize, beta0: f64) -> Result<Self> {
        if dim < 3 {
            return invalid(format!("dimension must be at least 3, got {dim}"));
        }
        if sigma_dim > dim - 1 {
            return invalid(format!("sigma dimension {sigma_dim} exceeds N-1 = {}", dim - 1));
        }
        if !(beta0 > 0.0 && beta0 <= 0.5) {
            return invalid(format!("beta0 must lie in (0, 1/2], got {beta0}"));
        }
        Ok(Self { dim, sigma_dim, beta0 })
    }

    pub fn with_default_beta(dim: usize, sigma_dim: usize) -> Result<Self> {
        Self::new(dim, sigma_dim, DEFAULT_BETA0)
    }

    /// `H = (N - k) / 2`.
    pub fn hardy_h(&self) -> f64 {
        (self.dim - self.sigma_dim) as f64 / 2.0
    }

    pub fn is_interior(&self, x: &[f64]) -> bool {
        norm(x) < 1.0
    }

    /// Distance to the boundary sphere.
    #[inline]
    pub fn d_boundary(&self, x: &[f64]) -> f64 {
        1.0 - norm(x)
    }

    /// Euclidean distance to `Σ`.
    #[inline]
    pub fn d_sigma(&self, x: &[f64]) -> f64 {
        if self.sigma_dim == 0 {
            let mut s = (x[0] - 1.0) * (x[0] - 1.0);
            for v in &x[1..] {
                s += v * v;
            }
            return s.sqrt();
        }
        let split = self.sigma_dim + 1;
        let head = norm(&x[..split]);
        let tail: f64 = x[split..].iter().map(|v| v * v).sum();
        ((head - 1.0) * (head - 1.0) + tail).sqrt()
    }

    /// Geodesic distance on the unit sphere from a unit vector to `Σ`.
    pub fn sigma_geodesic(&self, xi: &[f64]) -> f64 {
        let c = if self.sigma_dim == 0 { xi[0] } else { norm(&xi[..self.sigma_dim + 1]) };
        c.clamp(-1.0, 1.0).acos()
    }

    /// Modified distance `sqrt(dist_∂Ω(ξ_x, Σ)² + |x - ξ_x|²)` with `ξ_x = x/|x|`.
    pub fn d_sigma_tilde(&self, x: &[f64]) -> Result<f64> {
        let r = norm(x);
        if r == 0.0 {
            return invalid("modified distance undefined at the origin");
        }
        if r >= 1.0 {
            return invalid("modified distance requires an interior point");
        }
        Ok(self.d_sigma_tilde_unchecked(x, r))
    }

    #[inline]
    pub(crate) fn d_sigma_tilde_unchecked(&self, x: &[f64], r: f64) -> f64 {
        let c = if self.sigma_dim == 0 { x[0] / r } else { norm(&x[..self.sigma_dim + 1]) / r };
        let geo = c.clamp(-1.0, 1.0).acos();
        let d = 1.0 - r;
        (geo * geo + d * d).sqrt()
    }

    /// A canonical point of `Σ` (the first basis vector).
    pub fn sigma_anchor(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        e[0] = 1.0;
        e
    }

    /// A boundary point at maximal geodesic distance from `Σ`, if `Σ ≠ ∂Ω`.
    pub fn off_sigma_anchor(&self) -> Option<Vec<f64>> {
        let mut e = vec![0.0; self.dim];
        if self.sigma_dim == 0 {
            e[0] = -1.0;
        } else if self.sigma_dim < self.dim - 1 {
            e[self.dim - 1] = 1.0;
        } else {
            return None;
        }
        Some(e)
    }

    /// Whether a boundary point lies on `Σ` (within `tol`).
    pub fn on_sigma(&self, xi: &[f64], tol: f64) -> bool {
        self.d_sigma(xi) <= tol
    }

    /// Uniform random point of the ball.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut u = random_unit_vector(self.dim, rng);
        let r: f64 = rng.random::<f64>().powf(1.0 / self.dim as f64);
        u.iter_mut().for_each(|v| *v *= r);
        u
    }

    /// Random interior point with `d_∂Ω = depth` along a random direction.
    pub fn sample_at_depth<R: Rng + ?Sized>(&self, depth: f64, rng: &mut R) -> Vec<f64> {
        let mut u = random_unit_vector(self.dim, rng);
        u.iter_mut().for_each(|v| *v *= 1.0 - depth);
        u
    }

    /// Smooth cutoff `η_{β0}`: 1 for `d̃_Σ ≤ β0/4`, 0 for `d̃_Σ ≥ β0/2`.
    pub fn cutoff(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        if r == 0.0 || r >= 1.0 {
            return 0.0;
        }
        let dt = self.d_sigma_tilde_unchecked(x, r);
        let q = self.beta0 / 4.0;
        1.0 - smoothstep5((dt - q) / q)
    }

    /// Eigenfunction surrogate `d_∂Ω · d_Σ^{-α₋}`.
    pub fn phi_surrogate(&self, params: &SpectralParams, x: &[f64]) -> Result<f64> {
        let d = self.d_boundary(x);
        let ds = self.d_sigma(x);
        if d <= 0.0 {
            return invalid("eigenfunction surrogate requires an interior point");
        }
        if ds <= 0.0 {
            return invalid("eigenfunction surrogate is singular on Σ");
        }
        Ok(d * ds.powf(-params.alpha_minus))
    }

    /// Boundary-growth weight `W` (log-corrected when `μ = H²`).
    pub fn weight_w(&self, params: &SpectralParams, x: &[f64]) -> Result<f64> {
        let dt = self.d_sigma_tilde(x)?;
        self.weight_w_from(params, self.d_boundary(x), dt, self.d_sigma(x))
    }

    /// `W` from `d_∂Ω`, `d̃_Σ` and `d_Σ`.
    pub fn weight_w_from(&self, params: &SpectralParams, d: f64, dt: f64, ds: f64) -> Result<f64> {
        let base = d + dt * dt;
        if params.critical {
            if dt >= 1.0 {
                return invalid("log weight requires d̃_Σ < 1");
            }
            Ok(base * ds.powf(-self.hardy_h()) * dt.ln().abs())
        } else {
            Ok(base * dt.powf(-params.alpha_plus))
        }
    }

    /// Blended weight `W̃ = (1 - η) + η W`.
    pub fn weight_w_tilde(&self, params: &SpectralParams, x: &[f64]) -> Result<f64> {
        if !self.is_interior(x) {
            return invalid("weight requires an interior point");
        }
        let r = norm(x);
        if r == 0.0 {
            return Ok(1.0);
        }
        let dt = self.d_sigma_tilde_unchecked(x, r);
        self.weight_w_tilde_from(params, self.d_boundary(x), dt, self.d_sigma(x))
    }

    /// `W̃` from `d_∂Ω`, `d̃_Σ` and `d_Σ`.
    pub fn weight_w_tilde_from(&self, params: &SpectralParams, d: f64, dt: f64, ds: f64) -> Result<f64> {
        let q = self.beta0 / 4.0;
        let eta = 1.0 - smoothstep5((dt - q) / q);
        if eta == 0.0 {
            return Ok(1.0);
        }
        Ok((1.0 - eta) + eta * self.weight_w_from(params, d, dt, ds)?)
    }
}

pub(crate) fn random_unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// The two characteristic exponents `α± = H ± sqrt(H² - μ)`, `H = (N-k)/2`.
pub fn alpha_pm(mu: f64, dim: usize, sigma_dim: usize) -> Result<(f64, f64)> {
    if sigma_dim >= dim {
        return invalid("sigma dimension must be below N");
    }
    let h = (dim - sigma_dim) as f64 / 2.0;
    let disc = h * h - mu;
    if disc < -1e-12 * h * h.max(1.0) {
        return invalid(format!("supercritical Hardy parameter: mu = {mu} > H² = {}", h * h));
    }
    let root = disc.max(0.0).sqrt();
    let plus = h + root;
    // μ / α₊ avoids cancellation when μ is small.
    let minus = if plus > 0.0 { mu / plus } else { h - root };
    Ok((minus, plus))
}

/// Critical exponents; `+∞` when the corresponding formula has no finite threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalExponents {
    #[serde(with = "ext_f64")]
    pub p_boundary: f64,
    #[serde(with = "ext_f64")]
    pub p_sigma: f64,
    #[serde(with = "ext_f64")]
    pub p_plus: f64,
    #[serde(with = "ext_f64")]
    pub p_minus: f64,
}

impl CriticalExponents {
    pub fn new(dim: usize, alpha_minus: f64, alpha_plus: f64) -> Self {
        let n = dim as f64;
        let ratio = |a: f64| {
            if a <= 1.0 {
                f64::INFINITY
            } else {
                (a + 1.0) / (a - 1.0)
            }
        };
        Self {
            p_boundary: (n + 1.0) / (n - 1.0),
            p_sigma: ratio(n - alpha_minus),
            p_plus: ratio(alpha_plus),
            p_minus: ratio(alpha_minus),
        }
    }
}

/// Spectral data of `-Δ - μ/d_Σ²` on a model domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    pub mu: f64,
    pub h: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    /// `μ = H²` (double root, logarithmic regime).
    pub critical: bool,
    pub lambda_estimate: Option<f64>,
    pub exponents: CriticalExponents,
}

impl SpectralParams {
    pub fn new(domain: &DomainModel, mu: f64) -> Result<Self> {
        let (am, ap) = alpha_pm(mu, domain.dim, domain.sigma_dim)?;
        let h = domain.hardy_h();
        let critical = (h * h - mu).abs() <= 1e-12 * (h * h).max(1.0);
        let (am, ap) = if critical { (h, h) } else { (am, ap) };
        Ok(Self {
            mu,
            h,
            alpha_minus: am,
            alpha_plus: ap,
            critical,
            lambda_estimate: None,
            exponents: CriticalExponents::new(domain.dim, am, ap),
        })
    }

    /// The `k = 0, μ = N²/4` regime where the logarithmic kernels apply.
    pub fn is_point_log_case(&self, domain: &DomainModel) -> bool {
        self.critical && domain.sigma_dim == 0
    }
}

/// Cutoff description for the reference weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub beta0: f64,
    pub log_case: bool,
}

impl WeightSpec {
    pub fn new(domain: &DomainModel, params: &SpectralParams) -> Self {
        Self { beta0: domain.beta0, log_case: params.critical }
    }
}

/// Fitted constants of the distance expansions near `Σ`.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub samples: usize,
    /// `sup (|∇d̃|² - 1) / d̃`.
    pub c_gradient: f64,
    /// `sup |d̃ Δd̃ - (N-k-1)| / d̃`.
    pub c_laplacian: f64,
    /// `sup |∇d·∇d̃ - d/d̃|` (pure finite-difference error).
    pub max_cross_error: f64,
    /// `min, max` of `d̃/d_Σ` over the samples.
    pub ratio_range: (f64, f64),
}

/// Finite-difference check of the expansions of `d̃_Σ` in the tube `d_Σ < beta`.
pub fn check_distance_expansions<R: Rng + ?Sized>(
    domain: &DomainModel,
    beta: f64,
    samples: usize,
    rng: &mut R,
) -> ExpansionReport {
    let n = domain.dim;
    let target = (n - domain.sigma_dim - 1) as f64;
    let mut c_grad: f64 = 0.0;
    let mut c_lap: f64 = 0.0;
    let mut cross: f64 = 0.0;
    let mut rmin = f64::INFINITY;
    let mut rmax: f64 = 0.0;
    let mut taken = 0;
    while taken < samples {
        let depth = beta * rng.random::<f64>().powi(2);
        let x = domain.sample_at_depth(depth.max(1e-6), rng);
        let ds = domain.d_sigma(&x);
        if ds >= beta || ds < 1e-6 {
            continue;
        }
        taken += 1;
        let d = domain.d_boundary(&x);
        let dt = domain.d_sigma_tilde(&x).unwrap();
        rmin = rmin.min(dt / ds);
        rmax = rmax.max(dt / ds);
        let h = 1e-4 * d.min(ds);
        let f = |y: &[f64]| domain.d_sigma_tilde_unchecked(y, norm(y));
        // second differences on the scale of d̃
        let h2 = 1e-3 * dt;
        let mut grad = vec![0.0; n];
        let mut lap = 0.0;
        let mut y = x.clone();
        for i in 0..n {
            y[i] = x[i] + h;
            let fp = f(&y);
            y[i] = x[i] - h;
            let fm = f(&y);
            grad[i] = (fp - fm) / (2.0 * h);
            y[i] = x[i] + h2;
            let fp = f(&y);
            y[i] = x[i] - h2;
            let fm = f(&y);
            y[i] = x[i];
            lap += (fp - 2.0 * dt + fm) / (h2 * h2);
        }
        let rr = norm(&x);
        let grad_d: Vec<f64> = x.iter().map(|v| -v / rr).collect();
        c_grad = c_grad.max((dot(&grad, &grad) - 1.0) / dt);
        c_lap = c_lap.max((dt * lap - target).abs() / dt);
        cross = cross.max((dot(&grad_d, &grad) - d / dt).abs());
    }
    ExpansionReport {
        samples,
        c_gradient: c_grad,
        c_laplacian: c_lap,
        max_cross_error: cross,
        ratio_range: (rmin, rmax),
    }
}

/// Slope of `ln(W · d_Σ^H / (d + d̃²))` against `ln|ln d̃|` along the inward
/// normal through a point of `Σ`; equals 1 in the logarithmic regime.
pub fn log_weight_slope(domain: &DomainModel, params: &SpectralParams) -> Result<f64> {
    if !params.critical {
        return Err(Error::Domain("log weight slope needs μ = H²".into()));
    }
    let anchor = domain.sigma_anchor();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in 4..40 {
        let t = 2f64.powi(-j);
        let x: Vec<f64> = anchor.iter().map(|v| v * (1.0 - t)).collect();
        let dt = domain.d_sigma_tilde(&x)?;
        let w = domain.weight_w(params, &x)?;
        let power = (domain.d_boundary(&x) + dt * dt) * domain.d_sigma(&x).powf(-domain.hardy_h());
        xs.push(dt.ln().abs().ln());
        ys.push((w / power).ln());
    }
    fit_line(&xs, &ys).map(|(s, _)| s).ok_or_else(|| Error::Inconclusive("degenerate ray".into()))
}
