//! Weighted nonlinear capacities
//! `Cap(E) = inf{∫ d_∂Ω^b d_Σ^θ φ^s : φ ≥ 0, 𝔑_α[d_∂Ω^b d_Σ^θ φ] ≥ 1 on E}`
//! on a quadrature cloud.
//!
//! The target set is represented by deterministic sample points and the
//! constraint is imposed there. Primal and dual bounds share one kernel
//! matrix, so the discrete Hölder inequality makes `lower ≤ upper` hold by
//! construction.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::cloud::SampleCloud;
use crate::error::{invalid, Error, Result};
use crate::geometry::{DomainModel, SpectralParams};
use crate::kernels::{Kernel, KernelSpec, SiteGeom};
use crate::numerics::{dist, dot, norm, pairwise_sum, sphere_area, unit_ball_volume};
use crate::polar::complement_basis;

/// `ϑ = (α₊ + 1 - p(α₊ - 1)) / p`.
pub fn vartheta(p: f64, alpha_plus: f64) -> f64 {
    (alpha_plus + 1.0 - p * (alpha_plus - 1.0)) / p
}

/// One connected piece of a target set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Piece {
    /// Geodesic cap of `∂Ω` around a unit vector.
    BoundaryCap {
        center: Vec<f64>,
        radius: f64,
    },
    /// Geodesic cap of `Σ` around a point of `Σ`.
    SigmaCap {
        center: Vec<f64>,
        radius: f64,
    },
    /// Euclidean ball intersected with `Ω̄`.
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Point {
        at: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stratum {
    Interior,
    Boundary,
    Sigma,
}

const ON_SET_TOL: f64 = 1e-9;

impl Piece {
    /// Parse `cap:x1,..,xN:r`, `sigma_cap:..:r`, `ball:..:r` or `point:x1,..,xN`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let coords = |t: &str| -> Result<Vec<f64>> {
            t.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad coordinate {v:?} in {s:?}"))))
                .collect()
        };
        let radius = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad radius in {s:?}")));
        match parts.as_slice() {
            ["cap", c, r] => Ok(Self::BoundaryCap { center: coords(c)?, radius: radius(r)? }),
            ["sigma_cap", c, r] => Ok(Self::SigmaCap { center: coords(c)?, radius: radius(r)? }),
            ["ball", c, r] => Ok(Self::Ball { center: coords(c)?, radius: radius(r)? }),
            ["point", c] => Ok(Self::Point { at: coords(c)? }),
            _ => Err(Error::Config(format!("cannot parse set piece {s:?}"))),
        }
    }

    fn validate(&self, domain: &DomainModel) -> Result<()> {
        let dim_ok = |c: &[f64]| {
            if c.len() != domain.dim {
                invalid(format!("piece center has dimension {}, domain has {}", c.len(), domain.dim))
            } else {
                Ok(())
            }
        };
        match self {
            Self::BoundaryCap { center, radius } => {
                dim_ok(center)?;
                if (norm(center) - 1.0).abs() > ON_SET_TOL {
                    return invalid("cap center must lie on the unit sphere");
                }
                if !(*radius > 0.0 && *radius < PI) {
                    return invalid(format!("cap radius must lie in (0, π), got {radius}"));
                }
            }
            Self::SigmaCap { center, radius } => {
                dim_ok(center)?;
                if domain.d_sigma(center) > ON_SET_TOL {
                    return invalid("Σ-cap center must lie on Σ");
                }
                if !(*radius > 0.0 && *radius < PI) {
                    return invalid(format!("cap radius must lie in (0, π), got {radius}"));
                }
            }
            Self::Ball { center, radius } => {
                dim_ok(center)?;
                if norm(center) > 1.0 + ON_SET_TOL {
                    return invalid("ball center must lie in the closed ball");
                }
                if !(*radius > 0.0) {
                    return invalid(format!("ball radius must be positive, got {radius}"));
                }
            }
            Self::Point { at } => {
                dim_ok(at)?;
                if norm(at) > 1.0 + ON_SET_TOL {
                    return invalid("point must lie in the closed ball");
                }
            }
        }
        Ok(())
    }

    fn stratum(&self, domain: &DomainModel) -> Stratum {
        match self {
            Self::BoundaryCap { .. } => Stratum::Boundary,
            Self::SigmaCap { .. } => Stratum::Sigma,
            Self::Ball { .. } => Stratum::Interior,
            Self::Point { at } => {
                if domain.d_sigma(at) <= ON_SET_TOL {
                    Stratum::Sigma
                } else if 1.0 - norm(at) <= ON_SET_TOL {
                    Stratum::Boundary
                } else {
                    Stratum::Interior
                }
            }
        }
    }

    /// Hausdorff dimension of the piece.
    fn dimension(&self, domain: &DomainModel) -> usize {
        match self {
            Self::BoundaryCap { .. } => domain.dim - 1,
            Self::SigmaCap { .. } => domain.sigma_dim,
            Self::Ball { .. } => domain.dim,
            Self::Point { .. } => 0,
        }
    }

    /// Deterministic, approximately equal-measure sample points.
    pub fn samples(&self, domain: &DomainModel, m: usize) -> Vec<Vec<f64>> {
        let n = domain.dim;
        match self {
            Self::Point { at } => vec![at.clone()],
            Self::Ball { center, radius } => {
                let dirs = directions(n, m);
                (0..m)
                    .map(|i| {
                        let t = radius * ((i as f64 + 0.5) / m as f64).powf(1.0 / n as f64);
                        center.iter().zip(&dirs[i]).map(|(c, u)| c + t * u).collect::<Vec<f64>>()
                    })
                    .filter(|x| norm(x) <= 1.0)
                    .collect()
            }
            Self::BoundaryCap { center, radius } => geodesic_samples(center, &complement_basis(center), *radius, m),
            Self::SigmaCap { center, radius } => {
                let k = domain.sigma_dim;
                if k == 0 {
                    return vec![center.clone()];
                }
                let basis = sigma_tangent_basis(center, k);
                geodesic_samples(center, &basis, *radius, m)
            }
        }
    }
}

/// Orthonormal basis of the tangent space of `Σ` at `c`.
fn sigma_tangent_basis(c: &[f64], k: usize) -> Vec<Vec<f64>> {
    complement_basis(&c[..=k])
        .into_iter()
        .map(|v| {
            let mut w = vec![0.0; c.len()];
            w[..=k].copy_from_slice(&v);
            w
        })
        .collect()
}

fn geodesic_samples(center: &[f64], basis: &[Vec<f64>], radius: f64, m: usize) -> Vec<Vec<f64>> {
    let j = basis.len();
    let dirs = directions(j, m);
    (0..m)
        .map(|i| {
            let t = radius * ((i as f64 + 0.5) / m as f64).powf(1.0 / j as f64);
            let (s, c) = t.sin_cos();
            let mut x: Vec<f64> = center.iter().map(|v| c * v).collect();
            for (u, e) in dirs[i].iter().zip(basis) {
                x.iter_mut().zip(e).for_each(|(xv, ev)| *xv += s * u * ev);
            }
            let r = norm(&x);
            x.iter_mut().for_each(|v| *v /= r);
            x
        })
        .collect()
}

/// Low-discrepancy unit vectors in `R^dim`: alternating signs, golden angles,
/// or a Kronecker sequence pushed through Box–Muller.
fn directions(dim: usize, m: usize) -> Vec<Vec<f64>> {
    const ROOTS: [f64; 8] = [2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0];
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    (0..m)
        .map(|i| match dim {
            1 => vec![if i % 2 == 0 { 1.0 } else { -1.0 }],
            2 => {
                let a = 2.0 * PI * ((i as f64 + 0.5) * golden).fract();
                vec![a.cos(), a.sin()]
            }
            _ => {
                let mut v = Vec::with_capacity(dim + 1);
                let mut j = 0;
                while v.len() < dim {
                    let u =
                        |l: usize| (0.5 + (i as f64 + 1.0) * ROOTS[l % 8].sqrt().fract() * (1 + l / 8) as f64).fract();
                    let (u1, u2) = (u(j).max(1e-12), u(j + 1));
                    let rad = (-2.0 * u1.ln()).sqrt();
                    v.push(rad * (2.0 * PI * u2).cos());
                    v.push(rad * (2.0 * PI * u2).sin());
                    j += 2;
                }
                v.truncate(dim);
                let l = norm(&v);
                v.iter_mut().for_each(|x| *x /= l);
                v
            }
        })
        .collect()
}

/// Finite union of pieces.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TargetSet {
    pub pieces: Vec<Piece>,
}

impl TargetSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(piece: Piece) -> Self {
        Self { pieces: vec![piece] }
    }

    /// Pieces separated by `;`.
    pub fn parse(s: &str) -> Result<Self> {
        let pieces = s.split(';').filter(|t| !t.trim().is_empty()).map(Piece::parse).collect::<Result<_>>()?;
        Ok(Self { pieces })
    }

    pub fn union(&self, other: &TargetSet) -> Self {
        Self { pieces: self.pieces.iter().chain(&other.pieces).cloned().collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityOptions {
    /// Constraint points per piece.
    pub samples: usize,
    /// Projected-gradient iterations per optimization.
    pub max_iter: usize,
    /// Relative improvement below which a penalty level is left.
    pub tol: f64,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        Self { samples: 96, max_iter: 400, tol: 1e-4 }
    }
}

/// Problem data for `Cap_{𝔑_α,s}^{b,θ}(E)`.
#[derive(Debug, Clone)]
pub struct CapacityProblem {
    pub domain: DomainModel,
    pub set: TargetSet,
    pub alpha: f64,
    pub b: f64,
    pub theta: f64,
    pub s: f64,
    pub cloud: Arc<SampleCloud>,
    pub opts: CapacityOptions,
}

impl CapacityProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        domain: &DomainModel,
        set: TargetSet,
        alpha: f64,
        b: f64,
        theta: f64,
        s: f64,
        cloud: Arc<SampleCloud>,
        opts: CapacityOptions,
    ) -> Result<Self> {
        let n = domain.dim as f64;
        let k = domain.sigma_dim as f64;
        if !(s > 1.0) {
            return invalid(format!("capacity exponent must exceed 1, got {s}"));
        }
        if !(alpha < n) {
            return invalid(format!("alpha must be below N = {n}, got {alpha}"));
        }
        if !(b > 0.0) {
            return invalid(format!("b must be positive, got {b}"));
        }
        if !(theta > (k - n - b).max(-b - alpha)) {
            return invalid(format!("theta must exceed max(k - N - b, -b - alpha), got {theta}"));
        }
        if cloud.domain != *domain {
            return invalid("cloud lives on a different domain");
        }
        if opts.samples == 0 || opts.max_iter == 0 || !(opts.tol > 0.0) {
            return invalid("capacity options must be positive");
        }
        for p in &set.pieces {
            p.validate(domain)?;
        }
        Ok(Self { domain: *domain, set, alpha, b, theta, s, cloud, opts })
    }

    /// The same problem for another target set.
    pub fn with_set(&self, set: TargetSet) -> Result<Self> {
        for p in &set.pieces {
            p.validate(&self.domain)?;
        }
        Ok(Self { set, ..self.clone() })
    }

    fn kernel(&self) -> Result<Kernel> {
        let params = SpectralParams::new(&self.domain, 0.0)?;
        Kernel::new(KernelSpec::n_alpha(self.domain, params, self.alpha))
    }

    fn discretize(&self) -> Result<Discrete> {
        let kernel = self.kernel()?;
        let c = &self.cloud;
        let cw: Vec<f64> = (0..c.len())
            .map(|j| {
                let g = c.geom(j);
                c.weights()[j] * g.d.powf(self.b) * g.ds.powf(self.theta)
            })
            .collect();
        let self_mass: Vec<f64> = (0..c.len())
            .into_par_iter()
            .map(|j| kernel.cell_integral(c.geom(j), c.cell_radius(j)) / c.weights()[j])
            .collect();
        let mut rows = Vec::new();
        let mut points = Vec::new();
        for piece in &self.set.pieces {
            let start = points.len();
            let stratum = piece.stratum(&self.domain);
            for x in piece.samples(&self.domain, self.opts.samples) {
                let g = match stratum {
                    Stratum::Sigma => SiteGeom { d: 0.0, ds: 0.0 },
                    Stratum::Boundary => SiteGeom { d: 0.0, ds: self.domain.d_sigma(&x) },
                    Stratum::Interior => SiteGeom::of(&self.domain, &x),
                };
                points.push((x, g, stratum == Stratum::Interior));
            }
            rows.push(start..points.len());
        }
        let n = c.len();
        let k: Vec<f64> = points
            .par_iter()
            .flat_map_iter(|(x, gx, interior)| {
                let kernel = &kernel;
                let self_mass = &self_mass;
                (0..n).map(move |j| {
                    let r = dist(x, c.point(j));
                    if *interior && r < c.cell_radius(j) {
                        self_mass[j]
                    } else {
                        kernel.eval_geom(r, *gx, c.geom(j))
                    }
                })
            })
            .collect();
        Ok(Discrete { k, n, cw, rows, s: self.s })
    }

    /// Whether the uniform measure on each piece has a potential in
    /// `L^{s'}(d_∂Ω^b d_Σ^θ)`, from the local scaling of `𝔑_α` at the piece.
    pub fn trial_measure_admissible(&self, piece: &Piece) -> bool {
        let n = self.domain.dim as f64;
        let j = piece.dimension(&self.domain) as f64;
        let sp = self.s / (self.s - 1.0);
        let (pot, vol) = match piece.stratum(&self.domain) {
            Stratum::Interior => (2.0 - n + j, n - j),
            Stratum::Boundary => (j - n, self.b + n - j),
            Stratum::Sigma => (self.alpha - n + j, self.b + self.theta + n - j),
        };
        pot >= 0.0 || pot * sp + vol > 0.0
    }
}

/// Kernel matrix `K_ij = 𝔑_α(x_i, y_j)` between set samples and cloud points
/// and the weighted cloud measure `c_j = w_j d_∂Ω^b d_Σ^θ`.
struct Discrete {
    k: Vec<f64>,
    n: usize,
    cw: Vec<f64>,
    rows: Vec<Range<usize>>,
    s: f64,
}

impl Discrete {
    fn row(&self, i: usize) -> &[f64] {
        &self.k[i * self.n..(i + 1) * self.n]
    }

    /// `(𝔑[cφ])_i` on the given rows.
    fn potential(&self, rows: &[usize], phi: &[f64]) -> Vec<f64> {
        let f: Vec<f64> = phi.iter().zip(&self.cw).map(|(p, c)| p * c).collect();
        rows.par_iter().map(|&i| dot(self.row(i), &f)).collect()
    }

    /// `Σ_i m_i K_ij` for every column.
    fn adjoint(&self, rows: &[usize], m: &[f64]) -> Vec<f64> {
        const CHUNK: usize = 2048;
        let mut out = vec![0.0; self.n];
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, block)| {
            let off = c * CHUNK;
            for (&i, &mi) in rows.iter().zip(m) {
                if mi == 0.0 {
                    continue;
                }
                let r = &self.row(i)[off..off + block.len()];
                block.iter_mut().zip(r).for_each(|(o, k)| *o += mi * k);
            }
        });
        out
    }

    fn energy(&self, phi: &[f64]) -> f64 {
        let t: Vec<f64> = phi.iter().zip(&self.cw).map(|(p, c)| c * p.powf(self.s)).collect();
        pairwise_sum(&t)
    }

    /// `‖𝔑[ω]‖_{L^{s'}(c)}` for `ω = Σ m_i δ_{x_i}`.
    fn dual_norm(&self, rows: &[usize], m: &[f64]) -> f64 {
        let sp = self.s / (self.s - 1.0);
        let psi = self.adjoint(rows, m);
        let t: Vec<f64> = psi.iter().zip(&self.cw).map(|(p, c)| c * p.powf(sp)).collect();
        pairwise_sum(&t).powf(1.0 / sp)
    }

    /// `φ = 𝔑[ω]^{s'-1}`, the optimality form of the primal minimizer.
    fn dual_profile(&self, rows: &[usize], m: &[f64]) -> Vec<f64> {
        let e = 1.0 / (self.s - 1.0);
        self.adjoint(rows, m).iter().map(|p| p.powf(e)).collect()
    }

    /// Scale `φ` onto the constraint set; returns the scaled energy.
    fn restore(&self, rows: &[usize], phi: &mut [f64]) -> Option<f64> {
        let pot = self.potential(rows, phi);
        let lo = pot.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(lo > 0.0 && lo.is_finite()) {
            return None;
        }
        phi.iter_mut().for_each(|p| *p /= lo);
        Some(self.energy(phi))
    }

    /// Projected gradient on `J(φ) + κ Σ (1 - (𝔑[cφ])_i)_+²` over `φ ≥ 0`
    /// with backtracking and increasing `κ`, from a feasible start. The
    /// gradient is taken in the `c`-weighted inner product. Returns the best
    /// rescaled feasible iterate.
    fn minimize(&self, rows: &[usize], mut phi: Vec<f64>, opts: &CapacityOptions) -> Result<(f64, Vec<f64>, usize)> {
        const LEVELS: usize = 6;
        const WINDOW: usize = 20;
        let mut best = self
            .restore(rows, &mut phi)
            .ok_or_else(|| Error::Inconclusive("starting profile has no positive potential on the set".into()))?;
        let mut best_phi = phi.clone();
        let penalty = |phi: &[f64], kappa: f64| -> (f64, Vec<f64>) {
            let pot = self.potential(rows, phi);
            let viol: Vec<f64> = pot.iter().map(|p| (1.0 - p).max(0.0)).collect();
            let v2: f64 = viol.iter().map(|v| v * v).sum();
            (self.energy(phi) + kappa * v2, viol)
        };
        let mut kappa = best.max(f64::MIN_POSITIVE);
        let mut tau = 0.1;
        let mut iters = 0;
        for _ in 0..LEVELS {
            let (mut f, mut viol) = penalty(&phi, kappa);
            let mut history = vec![best];
            while iters < opts.max_iter {
                iters += 1;
                let back = self.adjoint(rows, &viol);
                let g: Vec<f64> =
                    phi.iter().zip(&back).map(|(p, q)| self.s * p.powf(self.s - 1.0) - 2.0 * kappa * q).collect();
                let mut accepted = None;
                while tau > 1e-14 {
                    let trial: Vec<f64> = phi.iter().zip(&g).map(|(p, d)| (p - tau * d).max(0.0)).collect();
                    let (ft, vt) = penalty(&trial, kappa);
                    if ft < f {
                        accepted = Some((trial, ft, vt));
                        break;
                    }
                    tau *= 0.5;
                }
                let Some((trial, ft, vt)) = accepted else { break };
                phi = trial;
                f = ft;
                viol = vt;
                tau *= 1.5;
                let mut scaled = phi.clone();
                if let Some(e) = self.restore(rows, &mut scaled) {
                    if e < best {
                        best = e;
                        best_phi = scaled;
                    }
                }
                history.push(best);
                if history.len() > WINDOW {
                    let old = history[history.len() - 1 - WINDOW];
                    if old - best <= opts.tol * best {
                        break;
                    }
                }
            }
            if iters >= opts.max_iter {
                break;
            }
            kappa *= 10.0;
        }
        Ok((best, best_phi, iters))
    }

    /// Multipliers maximizing `Σ m_i - ‖𝔑[m]‖_{s'}^{s'} / s'` over `m ≥ 0` by
    /// Jacobi-preconditioned projected ascent. `𝔑[m]^{s'-1}` is the stationary
    /// form of the primal minimizer.
    fn multipliers(&self, rows: &[usize], iters: usize) -> Vec<f64> {
        let sp = self.s / (self.s - 1.0);
        let objective = |m: &[f64]| -> (f64, Vec<f64>) {
            let psi = self.adjoint(rows, m);
            let t: Vec<f64> = psi.iter().zip(&self.cw).map(|(p, c)| c * p.powf(sp)).collect();
            (m.iter().sum::<f64>() - pairwise_sum(&t) / sp, psi)
        };
        let ones = vec![1.0; rows.len()];
        let (_, psi) = objective(&ones);
        let a: f64 = pairwise_sum(&psi.iter().zip(&self.cw).map(|(p, c)| c * p.powf(sp)).collect::<Vec<_>>());
        let t = (rows.len() as f64 / a).powf(1.0 / (sp - 1.0));
        let mut m: Vec<f64> = ones.iter().map(|v| v * t).collect();
        let (mut f, mut psi) = objective(&m);
        let diag: Vec<f64> = {
            let w: Vec<f64> = psi.iter().zip(&self.cw).map(|(p, c)| (sp - 1.0) * c * p.powf(sp - 2.0)).collect();
            rows.par_iter().map(|&i| self.row(i).iter().zip(&w).map(|(k, w)| k * k * w).sum::<f64>()).collect()
        };
        let mut tau = 1.0;
        for _ in 0..iters {
            let phi: Vec<f64> = psi.iter().map(|p| p.powf(sp - 1.0)).collect();
            let pot = self.potential(rows, &phi);
            let step: Vec<f64> = pot.iter().zip(&diag).map(|(p, d)| (1.0 - p) / d).collect();
            let mut moved = false;
            while tau > 1e-12 {
                let trial: Vec<f64> = m.iter().zip(&step).map(|(m, g)| (m + tau * g).max(0.0)).collect();
                let (ft, pt) = objective(&trial);
                if ft > f {
                    moved = (ft - f) > 1e-12 * f.abs();
                    m = trial;
                    f = ft;
                    psi = pt;
                    tau *= 1.5;
                    break;
                }
                tau *= 0.5;
            }
            if !moved {
                break;
            }
        }
        m
    }

    /// Dual ascent for a starting profile, then projected gradient.
    fn solve(&self, rows: &[usize], opts: &CapacityOptions) -> Result<(f64, Vec<f64>, usize)> {
        let m = self.multipliers(rows, opts.max_iter);
        self.minimize(rows, self.dual_profile(rows, &m), opts)
    }

    /// Union of pieces: the better of the pointwise maximum of the piece
    /// minimizers and a fresh dual start.
    fn solve_union(&self, pieces: &[Vec<f64>], opts: &CapacityOptions) -> Result<(f64, Vec<f64>, usize)> {
        let all: Vec<usize> = (0..self.rows.last().map_or(0, |r| r.end)).collect();
        let mut joint = vec![0.0; self.n];
        for phi in pieces {
            joint.iter_mut().zip(phi).for_each(|(s, p)| *s = f64::max(*s, *p));
        }
        let m = self.multipliers(&all, opts.max_iter);
        let mut fresh = self.dual_profile(&all, &m);
        let e_joint = self.restore(&all, &mut joint).unwrap_or(f64::INFINITY);
        let e_fresh = self.restore(&all, &mut fresh).unwrap_or(f64::INFINITY);
        let start = if e_fresh < e_joint { fresh } else { joint };
        self.minimize(&all, start, opts)
    }

    fn piece_rows(&self, c: usize) -> Vec<usize> {
        self.rows[c].clone().collect()
    }
}

/// Certified upper bound with its minimizer.
#[derive(Debug, Clone, Serialize)]
pub struct PrimalBound {
    pub value: f64,
    pub iterations: usize,
    /// The returned profile satisfies the constraint at every set sample.
    pub feasible: bool,
    #[serde(skip)]
    pub phi: Vec<f64>,
}

/// Minimize the discretized energy for each piece separately, then for the
/// union starting from the pointwise maximum of the piece minimizers. The
/// union value never exceeds the sum of the piece values.
pub fn cap_primal_upper(problem: &CapacityProblem) -> Result<PrimalBound> {
    if problem.set.is_empty() {
        return Ok(PrimalBound { value: 0.0, iterations: 0, feasible: true, phi: vec![0.0; problem.cloud.len()] });
    }
    let disc = problem.discretize()?;
    let opts = &problem.opts;
    let mut iterations = 0;
    let mut pieces = Vec::new();
    for c in 0..disc.rows.len() {
        let (v, phi, it) = disc.solve(&disc.piece_rows(c), opts)?;
        iterations += it;
        pieces.push((v, phi));
    }
    if pieces.len() == 1 {
        let (value, phi) = pieces.pop().unwrap();
        return Ok(PrimalBound { value, iterations, feasible: true, phi });
    }
    let phis: Vec<Vec<f64>> = pieces.into_iter().map(|(_, p)| p).collect();
    let (value, phi, it) = disc.solve_union(&phis, opts)?;
    let all: Vec<usize> = (0..disc.rows.last().unwrap().end).collect();
    let check = disc.potential(&all, &phi).iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(PrimalBound { value, iterations: iterations + it, feasible: check >= 1.0 - 1e-12, phi })
}

/// Largest `ω(E) / ‖𝔑[ω]‖_{s'}` over mixtures `ω = Σ λ_c ω_c` of unit-mass
/// trial measures, by multiplicative ascent on the simplex.
fn best_mixture(disc: &Discrete, rows: &[usize], shapes: &[Vec<f64>]) -> Result<f64> {
    let measure = |lambda: &[f64]| -> Vec<f64> {
        let mut m = vec![0.0; rows.len()];
        for (shape, &l) in shapes.iter().zip(lambda) {
            m.iter_mut().zip(shape).for_each(|(v, s)| *v += l * s);
        }
        m
    };
    let ratio = |lambda: &[f64]| -> Result<f64> {
        let nrm = disc.dual_norm(rows, &measure(lambda));
        if !(nrm > 0.0) {
            return Err(Error::Domain("trial potential has zero norm".into()));
        }
        Ok(lambda.iter().sum::<f64>() / nrm)
    };
    let c = shapes.len();
    let mut lambda = vec![1.0 / c as f64; c];
    let mut best = ratio(&lambda)?;
    for j in 0..c {
        let mut e = vec![0.0; c];
        e[j] = 1.0;
        best = best.max(ratio(&e)?);
    }
    if c > 1 {
        let mut step = 0.5;
        for _ in 0..60 {
            let base = ratio(&lambda)?;
            let grad: Vec<f64> = (0..c)
                .map(|j| {
                    let mut t = lambda.clone();
                    t[j] *= 1.0 + 1e-4;
                    (ratio(&t).unwrap_or(base) - base) / (1e-4 * lambda[j].max(1e-300))
                })
                .collect();
            let scale = grad.iter().map(|g| g.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let mut t: Vec<f64> = lambda.iter().zip(&grad).map(|(l, g)| l * (step * g / scale).exp()).collect();
            let sum: f64 = t.iter().sum();
            t.iter_mut().for_each(|v| *v /= sum);
            let r = ratio(&t)?;
            if r > base {
                lambda = t;
                best = best.max(r);
            } else {
                step *= 0.5;
            }
        }
    }
    Ok(best)
}

/// Lower bound `(ω(E) / ‖𝔑_α[ω]‖_{L^{s'}})^s` maximized over mixtures of the
/// uniform measures on the pieces. Pieces whose uniform measure has a
/// potential outside `L^{s'}` carry no mass.
pub fn cap_dual_lower(problem: &CapacityProblem) -> Result<f64> {
    if problem.set.is_empty() {
        return Ok(0.0);
    }
    let disc = problem.discretize()?;
    let total = disc.rows.last().unwrap().end;
    let shapes: Vec<Vec<f64>> = (0..disc.rows.len())
        .filter(|&c| problem.trial_measure_admissible(&problem.set.pieces[c]))
        .map(|c| {
            let r = &disc.rows[c];
            let mut m = vec![0.0; total];
            m[r.clone()].iter_mut().for_each(|v| *v = 1.0 / r.len() as f64);
            m
        })
        .collect();
    if shapes.is_empty() {
        return Ok(0.0);
    }
    let all: Vec<usize> = (0..total).collect();
    Ok(best_mixture(&disc, &all, &shapes)?.powf(problem.s))
}

/// Both bounds of one problem.
#[derive(Debug, Clone, Serialize)]
pub struct CapacityEstimate {
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
    pub feasible: bool,
}

pub fn estimate(problem: &CapacityProblem) -> Result<CapacityEstimate> {
    let upper = cap_primal_upper(problem)?;
    let lower = cap_dual_lower(problem)?;
    Ok(CapacityEstimate { lower, upper: upper.value, iterations: upper.iterations, feasible: upper.feasible })
}

/// Outcome of the flat-chart surrogate.
#[derive(Debug, Clone, Serialize)]
pub struct RieszEstimate {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub verdict: String,
    pub grid_points: usize,
}

/// Half-width of the chart box in normal coordinates on `Σ`.
pub const CHART_HALF_WIDTH: f64 = 1.0;
/// Dyadic refinement levels of the chart grid toward its center.
pub const CHART_LEVELS: i32 = 6;

/// Capacity `inf{‖f‖_κ^κ : I_ϑ[f] ≥ 1 on E}` of a union of `Σ`-caps and
/// points of `Σ` for the Riesz kernel `|x - y|^{ϑ-k}`, in geodesic normal
/// coordinates at the anchor of `Σ` with densities supported in the chart box
/// `[-1, 1]^k`. The set is represented by the chart grid nodes it contains
/// (the nearest node for a point).
pub fn riesz_sigma_cap(
    domain: &DomainModel,
    set: &TargetSet,
    vartheta: f64,
    kappa: f64,
    opts: CapacityOptions,
) -> Result<RieszEstimate> {
    let k = domain.sigma_dim;
    if !(kappa > 1.0) {
        return invalid(format!("capacity exponent must exceed 1, got {kappa}"));
    }
    if !(vartheta > 0.0) {
        return invalid(format!("vartheta must be positive, got {vartheta}"));
    }
    if vartheta >= k as f64 {
        return Ok(RieszEstimate {
            lower: None,
            upper: None,
            verdict: "every nonempty set has positive capacity".into(),
            grid_points: 0,
        });
    }
    let origin = domain.sigma_anchor();
    let basis = sigma_tangent_basis(&origin, k);
    let exp = |v: &[f64]| -> Vec<f64> {
        let t = norm(v);
        let (s, c) = t.sin_cos();
        let mut x: Vec<f64> = origin.iter().map(|o| c * o).collect();
        if t > 0.0 {
            for (vi, e) in v.iter().zip(&basis) {
                x.iter_mut().zip(e).for_each(|(xv, ev)| *xv += s * vi / t * ev);
            }
        }
        x
    };
    let (grid, h) = dyadic_grid(k, CHART_LEVELS);
    let n = h.len();
    let node = |j: usize| &grid[j * k..(j + 1) * k];
    let on_sigma: Vec<Vec<f64>> = (0..n).map(|j| exp(node(j))).collect();
    let geo = |x: &[f64], y: &[f64]| dot(x, y).clamp(-1.0, 1.0).acos();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for p in &set.pieces {
        p.validate(domain)?;
        let (center, radius) = match p {
            Piece::SigmaCap { center, radius } => (center, *radius),
            Piece::Point { at } if domain.d_sigma(at) <= ON_SET_TOL => (at, 0.0),
            _ => return invalid("the chart capacity takes Σ-caps and points of Σ only"),
        };
        if geo(center, &origin) + radius >= CHART_HALF_WIDTH {
            return invalid("set does not fit in the chart");
        }
        let inside: Vec<usize> = if radius > 0.0 {
            (0..n).filter(|&j| geo(&on_sigma[j], center) <= radius).collect()
        } else {
            let nearest =
                (0..n).min_by(|&a, &b| geo(&on_sigma[a], center).total_cmp(&geo(&on_sigma[b], center))).unwrap();
            vec![nearest]
        };
        if inside.is_empty() {
            return Err(Error::Inconclusive("cap is smaller than the chart grid".into()));
        }
        members.push(inside);
    }
    if members.is_empty() {
        return Ok(RieszEstimate { lower: Some(0.0), upper: Some(0.0), verdict: "empty set".into(), grid_points: n });
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for m in &members {
        let start = targets.len();
        targets.extend_from_slice(m);
        rows.push(start..targets.len());
    }
    let kmat: Vec<f64> = targets
        .par_iter()
        .flat_map_iter(|&i| {
            let grid = &grid;
            let h = &h;
            (0..n).map(move |j| riesz_cell_mean(&grid[i * k..(i + 1) * k], &grid[j * k..(j + 1) * k], h[j], vartheta))
        })
        .collect();
    let vol: Vec<f64> = h.iter().map(|h| h.powi(k as i32)).collect();
    let disc = Discrete { k: kmat, n, cw: vol.clone(), rows, s: kappa };
    let all: Vec<usize> = (0..targets.len()).collect();
    let shapes: Vec<Vec<f64>> = disc
        .rows
        .iter()
        .map(|r| {
            let mass: f64 = targets[r.clone()].iter().map(|&j| vol[j]).sum();
            let mut m = vec![0.0; targets.len()];
            for t in r.clone() {
                m[t] = vol[targets[t]] / mass;
            }
            m
        })
        .collect();
    let lower = best_mixture(&disc, &all, &shapes)?.powf(kappa);
    let pieces =
        (0..disc.rows.len()).map(|c| Ok(disc.solve(&disc.piece_rows(c), &opts)?.1)).collect::<Result<Vec<_>>>()?;
    let upper = if pieces.len() == 1 { disc.energy(&pieces[0]) } else { disc.solve_union(&pieces, &opts)?.0 };
    Ok(RieszEstimate { lower: Some(lower), upper: Some(upper), verdict: "estimated".into(), grid_points: n })
}

/// Subdivisions per axis for cells near the evaluation point.
const NEAR_SPLIT: usize = 6;

/// Mean of `|x - y|^{ϑ-k}` over the cube of side `h` centered at `c`. Cubes
/// within three cell radii of `x` are split; the piece containing `x` uses
/// the exact mean over the ball of equal volume.
fn riesz_cell_mean(x: &[f64], c: &[f64], h: f64, vartheta: f64) -> f64 {
    let k = c.len();
    let ek = vartheta - k as f64;
    let ball_mean = |side: f64| {
        let v = side.powi(k as i32);
        let rho = (v / unit_ball_volume(k)).powf(1.0 / k as f64);
        (rho, sphere_area(k) * rho.powf(vartheta) / vartheta / v)
    };
    let (rho, own) = ball_mean(h);
    let r = dist(x, c);
    if r == 0.0 {
        return own;
    }
    if r >= 3.0 * rho {
        return r.powf(ek);
    }
    let q = NEAR_SPLIT;
    let sub = h / q as f64;
    let (sub_rho, sub_own) = ball_mean(sub);
    let total = q.pow(k as u32);
    let mut acc = 0.0;
    let mut y = vec![0.0; k];
    for idx in 0..total {
        let mut rest = idx;
        for (a, yv) in y.iter_mut().enumerate() {
            *yv = c[a] - 0.5 * h + sub * ((rest % q) as f64 + 0.5);
            rest /= q;
        }
        let rs = dist(x, &y);
        acc += if rs < sub_rho { sub_own } else { rs.powf(ek) };
    }
    acc / total as f64
}

/// Nested box tiling of `[-1, 1]^k`: the innermost box has half-width
/// `2^{-levels}` and every enclosing level doubles both size and spacing.
fn dyadic_grid(k: usize, levels: i32) -> (Vec<f64>, Vec<f64>) {
    let per_side: usize = match k {
        1 => 64,
        2 => 24,
        _ => 12,
    };
    let s0 = CHART_HALF_WIDTH / 2f64.powi(levels);
    let mut coords = Vec::new();
    let mut spacing = Vec::new();
    for l in 0..=levels {
        let half = s0 * 2f64.powi(l);
        let h = 2.0 * half / per_side as f64;
        let total = per_side.pow(k as u32);
        for idx in 0..total {
            let mut rest = idx;
            let mut c = Vec::with_capacity(k);
            for _ in 0..k {
                c.push(-half + h * ((rest % per_side) as f64 + 0.5));
                rest /= per_side;
            }
            let inner = l > 0 && c.iter().all(|v| v.abs() < half / 2.0);
            if !inner {
                coords.extend(c);
                spacing.push(h);
            }
        }
    }
    (coords, spacing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vartheta_values() {
        assert_eq!(vartheta(2.0, 2.0), 0.5);
        assert!((vartheta(1.5, 3.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(vartheta(3.0, 2.0).abs() < 1e-15);
    }

    #[test]
    fn parse_pieces() {
        let s = TargetSet::parse("cap:1,0,0:0.1; point:0.5,0,0").unwrap();
        assert_eq!(s.pieces.len(), 2);
        assert_eq!(s.pieces[0], Piece::BoundaryCap { center: vec![1.0, 0.0, 0.0], radius: 0.1 });
        assert!(TargetSet::parse("disc:1,0,0:0.1").is_err());
        assert!(TargetSet::parse("").unwrap().is_empty());
    }

    #[test]
    fn samples_stay_on_their_piece() {
        let d = DomainModel::with_default_beta(4, 1).unwrap();
        let c = vec![0.0, 1.0, 0.0, 0.0];
        let cap = Piece::SigmaCap { center: c.clone(), radius: 0.2 };
        for x in cap.samples(&d, 50) {
            assert!(d.d_sigma(&x) < 1e-12);
            assert!(dot(&x, &c).acos() <= 0.2 + 1e-12);
        }
        let cap = Piece::BoundaryCap { center: c.clone(), radius: 0.3 };
        for x in cap.samples(&d, 50) {
            assert!((norm(&x) - 1.0).abs() < 1e-12);
            assert!(dot(&x, &c).acos() <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn directions_are_unit() {
        for dim in 1..6 {
            for v in directions(dim, 40) {
                assert!((norm(&v) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dyadic_grid_tiles_chart() {
        for k in 1..4 {
            let (_, h) = dyadic_grid(k, 4);
            let vol: f64 = h.iter().map(|h| h.powi(k as i32)).sum();
            assert!((vol - 2f64.powi(k as i32)).abs() < 1e-9, "k={k} vol={vol}");
        }
    }
}
