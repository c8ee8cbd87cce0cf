//! Quadrature clouds over the ball and scalar fields sampled on them.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{random_unit_vector, DomainModel, SpectralParams};
use crate::kernels::SiteGeom;
use crate::numerics::{norm, pairwise_sum, smoothstep5, sphere_area, unit_ball_volume};
use crate::polar::{direction_rule, radial_rule};

const MAGIC: &[u8; 4] = b"HBVP";
const FORMAT_VERSION: u32 = 1;
const KIND_CLOUD: u32 = 0;
const KIND_FIELD: u32 = 1;

/// Points closer than this to `∂Ω` or `Σ` are not generated; `1 - |x|` has
/// too few significant digits below it.
const MIN_DEPTH: f64 = 1e-10;

/// Sampling density of a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grading {
    /// Boundary grading exponent: depth `1 - r ≈ q (1 - s)^q` near `∂Ω`.
    pub q: f64,
    /// Number of e-folds of `d_Σ` resolved log-uniformly inside the tube;
    /// the core `d_Σ < τ e^{-depth}` is left out.
    pub tube_depth: f64,
    /// Tube radius `τ` around `Σ`.
    pub tube: f64,
    /// Share of points spent inside the tube.
    pub sigma_fraction: f64,
}

impl Default for Grading {
    fn default() -> Self {
        Self { q: 3.0, tube_depth: 12.0, tube: 0.25, sigma_fraction: 0.3 }
    }
}

impl Grading {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0) {
            return invalid(format!("radial grading exponent must be positive, got {}", self.q));
        }
        if !(self.tube_depth >= 0.0) {
            return invalid("tube depth must be nonnegative");
        }
        if !(self.tube > 0.0 && self.tube < 1.0) {
            return invalid("tube radius must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.sigma_fraction) {
            return invalid("sigma_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Weighted interior point set. Coordinates are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    pub domain: DomainModel,
    pub grading: Grading,
    pub seed: u64,
    coords: Vec<f64>,
    weights: Vec<f64>,
    extents: Vec<f64>,
    d: Vec<f64>,
    ds: Vec<f64>,
}

impl SampleCloud {
    /// Assemble a cloud from raw points and weights. Cells are taken to be
    /// round until [`SampleCloud::with_extents`] says otherwise.
    pub fn from_points(
        domain: DomainModel,
        grading: Grading,
        seed: u64,
        coords: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let dim = domain.dim;
        if coords.len() != weights.len() * dim {
            return Err(Error::Format("coordinate and weight lengths disagree".into()));
        }
        let mut d = Vec::with_capacity(weights.len());
        let mut ds = Vec::with_capacity(weights.len());
        for (x, w) in coords.chunks_exact(dim).zip(&weights) {
            if !domain.is_interior(x) {
                return domain_err_point(x);
            }
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::Format("weights must be positive".into()));
            }
            d.push(domain.d_boundary(x));
            ds.push(domain.d_sigma(x));
        }
        let n = unit_ball_volume(dim);
        let extents = weights.iter().map(|w| 2.0 * (w / n).powf(1.0 / dim as f64)).collect();
        Ok(Self { domain, grading, seed, coords, weights, extents, d, ds })
    }

    /// Replace the per-point cell extents (largest cell diameter).
    pub fn with_extents(mut self, extents: Vec<f64>) -> Result<Self> {
        if extents.len() != self.len() {
            return Err(Error::Format("extent and weight lengths disagree".into()));
        }
        if extents.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Format("extents must be positive".into()));
        }
        self.extents = extents;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let n = self.domain.dim;
        &self.coords[i * n..(i + 1) * n]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Largest diameter of the cell of point `i`.
    #[inline]
    pub fn extent(&self, i: usize) -> f64 {
        self.extents[i]
    }

    pub fn d_boundary(&self) -> &[f64] {
        &self.d
    }

    pub fn d_sigma(&self) -> &[f64] {
        &self.ds
    }

    #[inline]
    pub fn geom(&self, i: usize) -> SiteGeom {
        SiteGeom { d: self.d[i], ds: self.ds[i] }
    }

    /// Radius of the ball with the same volume as the cell of point `i`.
    pub fn cell_radius(&self, i: usize) -> f64 {
        let n = self.domain.dim;
        (self.weights[i] / unit_ball_volume(n)).powf(1.0 / n as f64)
    }

    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// `Σ w_i f(x_i)` with a fixed summation order.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.len());
        let terms: Vec<f64> = self.weights.par_iter().zip(values).map(|(w, v)| w * v).collect();
        pairwise_sum(&terms)
    }

    /// Evaluate a function at every point.
    pub fn map<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[f64], SiteGeom) -> f64 + Sync,
    {
        (0..self.len()).into_par_iter().map(|i| f(self.point(i), self.geom(i))).collect()
    }

    /// Point counts in the dyadic shells `d_∂Ω ∈ [2^{-j-1}, 2^{-j})` and
    /// `d_Σ ∈ [2^{-j-1}, 2^{-j})`, `j = 0..levels`.
    pub fn shell_counts(&self, levels: usize) -> (Vec<usize>, Vec<usize>) {
        let bucket = |v: f64| {
            let j = (-v.log2()).floor();
            if j >= 0.0 && (j as usize) < levels {
                Some(j as usize)
            } else {
                None
            }
        };
        let mut cb = vec![0; levels];
        let mut cs = vec![0; levels];
        for i in 0..self.len() {
            if let Some(j) = bucket(self.d[i]) {
                cb[j] += 1;
            }
            if let Some(j) = bucket(self.ds[i]) {
                cs[j] += 1;
            }
        }
        (cb, cs)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        write_header(w, KIND_CLOUD, self)?;
        write_f64s(w, &self.coords)?;
        write_f64s(w, &self.weights)?;
        write_f64s(w, &self.extents)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let (kind, cloud) = read_body(r)?;
        if kind != KIND_CLOUD {
            return Err(Error::Format("file holds a field, not a cloud".into()));
        }
        Ok(cloud)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn domain_err_point<T>(x: &[f64]) -> Result<T> {
    invalid(format!("cloud point {x:?} is not interior"))
}

/// Shifted cubic grid in the unit ball of `R^m` (restricted to `x_0 ≤ 0` when
/// `half`): cell centers of side `h`, offset by one seeded shift. Each point
/// carries volume `h^m`.
fn shifted_grid<R: Rng>(m: usize, h: f64, half: bool, rng: &mut R) -> Vec<Vec<f64>> {
    let per_axis = (2.0 / h).ceil() as usize + 1;
    let shift: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * h).collect();
    let total = per_axis.pow(m as u32);
    let mut out = Vec::new();
    let mut idx = vec![0usize; m];
    for _ in 0..total {
        let p: Vec<f64> = idx.iter().zip(&shift).map(|(&i, s)| -1.0 - h + s + (i as f64 + 0.5) * h).collect();
        if norm(&p) < 1.0 && !(half && p[0] > 0.0) {
            out.push(p);
        }
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < per_axis {
                break;
            }
            *slot = 0;
        }
    }
    out
}

/// Cell side giving about `count` cells in the unit (half) ball of `R^m`.
fn cell_side(m: usize, count: usize, half: bool) -> f64 {
    let vol = unit_ball_volume(m) * if half { 0.5 } else { 1.0 };
    (vol / count.max(1) as f64).powf(1.0 / m as f64)
}

/// Share of the tube partition of unity carried at `d_Σ = t`.
fn tube_share(t: f64, tau: f64) -> f64 {
    1.0 - smoothstep5(2.0 * t / tau - 1.0)
}

/// Build a graded, seeded quadrature cloud with roughly `resolution` points.
///
/// The ball is split by a smooth partition of unity into an outer part and a
/// tube `{d_Σ < τ}`. The outer part is a shifted cubic grid of the unit ball
/// pushed through a radial map with unit slope at the center and depth `≈ q(1-s)^q`
/// at the boundary. The tube part is a product of a point set on `Σ`, Gauss
/// directions in the inward normal half-sphere and Gauss nodes in `ln d_Σ`
/// over `tube_depth` e-folds. Jacobians and partition weights are folded
/// into the quadrature weights.
pub fn make_cloud(domain: &DomainModel, resolution: usize, grading: Grading, seed: u64) -> Result<SampleCloud> {
    grading.validate()?;
    if resolution < 1000 {
        return Err(Error::Domain(format!("resolution must be at least 1000, got {resolution}")));
    }
    let n = domain.dim;
    let tau = grading.tube;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(resolution * n);
    let mut weights = Vec::with_capacity(resolution);
    let mut extents = Vec::with_capacity(resolution);
    let n_tube = (grading.sigma_fraction * resolution as f64).round() as usize;
    let share = |x: &[f64]| if n_tube > 0 { tube_share(domain.d_sigma(x), tau) } else { 0.0 };

    let q = grading.q;
    let h = cell_side(n, resolution - n_tube, false);
    let cell = h.powi(n as i32);
    for p in shifted_grid(n, h, false, &mut rng) {
        let s = norm(&p);
        if s == 0.0 {
            continue;
        }
        let depth = (1.0 - s).powf(q) * (1.0 + (q - 1.0) * s);
        let r = 1.0 - depth;
        if depth < MIN_DEPTH {
            continue;
        }
        let x: Vec<f64> = p.iter().map(|v| v * r / s).collect();
        let w = 1.0 - share(&x);
        if w <= 0.0 {
            continue;
        }
        let dr = (1.0 - s).powf(q - 1.0) * (1.0 + (q * q - 1.0) * s);
        coords.extend_from_slice(&x);
        weights.push(w * cell * dr * (r / s).powi(n as i32 - 1));
        extents.push(h * dr.max(r / s) * (n as f64).sqrt());
    }

    if n_tube > 0 {
        let k = domain.sigma_dim;
        let m = n - k;
        let rho_min = tau * (-grading.tube_depth).exp();
        let octaves = (grading.tube_depth / std::f64::consts::LN_2).ceil().max(1.0);
        let n_rad = (octaves as usize) * TUBE_PER_OCTAVE + 2 * (TUBE_EDGE_PER_OCTAVE - TUBE_PER_OCTAVE);
        let budget = (n_tube / n_rad).max(1);
        let (n_along, fibre_dirs) = tube_layout(k, m, budget, seed);
        let along = sphere_points(k, n_along, &mut rng);
        let along_w = if k == 0 { 1.0 } else { sphere_area(k + 1) / n_along as f64 };
        let along_h = if k == 0 { 0.0 } else { along_w.powf(1.0 / k as f64) };
        let dir_h = (sphere_area(m) * 0.5 / fibre_dirs.len() as f64).powf(1.0 / (m as f64 - 1.0).max(1.0));
        let radial_h = std::f64::consts::LN_2 / TUBE_PER_OCTAVE as f64;
        for (omega, dw) in &fibre_dirs {
            // the fibre in direction ω meets the sphere at ρ = -2ω₀
            let reach = tau.min(-2.0 * omega[0]);
            if reach <= rho_min {
                continue;
            }
            let edge = 0.25 * tau;
            let mut radii = radial_rule(m, rho_min, reach.min(edge), TUBE_PER_OCTAVE);
            if reach > edge {
                radii.extend(radial_rule(m, edge, reach, TUBE_EDGE_PER_OCTAVE));
            }
            for (rho, rw) in radii {
                let a = omega[0] * rho;
                let ext = (rho * dir_h.max(radial_h)).max(along_h * (1.0 + a));
                for e in &along {
                    let mut x = Vec::with_capacity(n);
                    x.extend(e.iter().map(|c| c * (1.0 + a)));
                    x.extend(omega[1..].iter().map(|c| c * rho));
                    if 1.0 - norm(&x) < MIN_DEPTH {
                        continue;
                    }
                    let w = share(&x);
                    if w <= 0.0 {
                        continue;
                    }
                    coords.extend_from_slice(&x);
                    weights.push(w * rw * dw * along_w * (1.0 + a).powi(k as i32));
                    extents.push(ext);
                }
            }
        }
    }
    SampleCloud::from_points(*domain, grading, seed, coords, weights)?.with_extents(extents)
}

/// Gauss nodes per octave of `d_Σ` inside the tube.
const TUBE_PER_OCTAVE: usize = 2;
/// Gauss nodes per octave where the tube partition of unity varies.
const TUBE_EDGE_PER_OCTAVE: usize = 6;

/// Split `budget` tube columns between points along `Σ` and fibre directions
/// in the inward half-sphere `S^{m-1}`, matching their angular spacings.
fn tube_layout(k: usize, m: usize, budget: usize, seed: u64) -> (usize, Vec<(Vec<f64>, f64)>) {
    let dirs_for = |count: usize| -> Vec<(Vec<f64>, f64)> {
        if m == 1 {
            return vec![(vec![-1.0], 1.0)];
        }
        let mut axis = vec![0.0; m];
        axis[0] = -1.0;
        let (n_theta, n_az) = if m == 2 {
            (count.div_ceil(2).max(2), 2)
        } else {
            let t = ((count as f64 / 2.0).sqrt().round() as usize).max(2);
            (t, (count / t).max(4))
        };
        direction_rule(&axis, std::f64::consts::FRAC_PI_2, n_theta, n_az, seed)
    };
    if k == 0 {
        return (1, dirs_for(budget));
    }
    if m == 1 {
        return (budget.max(2), dirs_for(1));
    }
    let spacing = |area: f64, count: usize, dim: usize| (area / count as f64).powf(1.0 / dim as f64);
    let half = sphere_area(m) * 0.5;
    let mut best = (f64::INFINITY, 2usize);
    for n_al in 2..=budget.max(2) {
        let n_dir = (budget / n_al).max(1);
        let gap = (spacing(sphere_area(k + 1), n_al, k) / spacing(half, n_dir, m - 1)).ln().abs();
        if gap < best.0 {
            best = (gap, n_al);
        }
    }
    (best.1, dirs_for((budget / best.1).max(1)))
}

/// Roughly uniform equal-weight points on the great sphere `S^k ⊂ R^{k+1}`,
/// seeded by a random rotation or offset.
fn sphere_points<R: Rng>(k: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    match k {
        0 => vec![vec![1.0]],
        1 => {
            let off = rng.random::<f64>();
            (0..count)
                .map(|j| {
                    let t = 2.0 * std::f64::consts::PI * (j as f64 + off) / count as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect()
        }
        2 => {
            let frame = random_frame(3, rng);
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|j| {
                    let z = 1.0 - (2.0 * j as f64 + 1.0) / count as f64;
                    let rad = (1.0 - z * z).sqrt();
                    let t = golden * j as f64;
                    let p = [rad * t.cos(), rad * t.sin(), z];
                    (0..3).map(|i| (0..3).map(|l| frame[l][i] * p[l]).sum()).collect()
                })
                .collect()
        }
        _ => (0..count).map(|_| random_unit_vector(k + 1, rng)).collect(),
    }
}

/// Random orthonormal frame of `R^n` (rows).
fn random_frame<R: Rng>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v = random_unit_vector(n, rng);
        for b in &rows {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let l = norm(&v);
        if l > 1e-6 {
            rows.push(v.iter().map(|x| x / l).collect());
        }
    }
    rows
}

/// Scalar field on a cloud.
#[derive(Debug, Clone)]
pub struct Field {
    pub cloud: Arc<SampleCloud>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(cloud: Arc<SampleCloud>, values: Vec<f64>) -> Result<Self> {
        if values.len() != cloud.len() {
            return Err(Error::Format(format!("field has {} values for {} points", values.len(), cloud.len())));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Format("field contains NaN".into()));
        }
        Ok(Self { cloud, values })
    }

    pub fn zeros(cloud: Arc<SampleCloud>) -> Self {
        let n = cloud.len();
        Self { cloud, values: vec![0.0; n] }
    }

    pub fn from_fn<F>(cloud: Arc<SampleCloud>, f: F) -> Self
    where
        F: Fn(&[f64], SiteGeom) -> f64 + Sync,
    {
        let values = cloud.map(f);
        Self { cloud, values }
    }

    pub fn integral(&self) -> f64 {
        self.cloud.integrate(&self.values)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        write_header(w, KIND_FIELD, &self.cloud)?;
        write_f64s(w, self.cloud.coords())?;
        write_f64s(w, self.cloud.weights())?;
        write_f64s(w, &self.cloud.extents)?;
        write_f64s(w, &self.values)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let (kind, cloud) = read_body(r)?;
        if kind != KIND_FIELD {
            return Err(Error::Format("file holds a cloud, not a field".into()));
        }
        let values = read_f64s(r, cloud.len())?;
        Field::new(Arc::new(cloud), values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// `(∫ |u|^p φ dx)^{1/p}` with the eigenfunction surrogate `φ = d_∂Ω d_Σ^{-α₋}`.
pub fn lp_phi_norm(field: &Field, p: f64, params: &SpectralParams) -> Result<f64> {
    if !(p >= 1.0) {
        return invalid(format!("norm exponent must be at least 1, got {p}"));
    }
    let cloud = &field.cloud;
    if cloud.is_empty() {
        return Err(Error::Inconclusive("empty field".into()));
    }
    let am = params.alpha_minus;
    let terms: Vec<f64> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let g = cloud.geom(i);
            field.values[i].abs().powf(p) * g.d * g.ds.powf(-am)
        })
        .collect();
    Ok(cloud.integrate(&terms).powf(1.0 / p))
}

fn write_header(w: &mut impl Write, kind: u32, c: &SampleCloud) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [FORMAT_VERSION, kind, c.domain.dim as u32, c.domain.sigma_dim as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(c.len() as u64).to_le_bytes())?;
    w.write_all(&c.seed.to_le_bytes())?;
    let g = &c.grading;
    write_f64s(w, &[c.domain.beta0, g.q, g.tube_depth, g.tube, g.sigma_fraction])
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_body(r: &mut impl Read) -> Result<(u32, SampleCloud)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let kind = read_u32(r)?;
    let dim = read_u32(r)? as usize;
    let k = read_u32(r)? as usize;
    let n = read_u64(r)? as usize;
    let seed = read_u64(r)?;
    let h = read_f64s(r, 5)?;
    let dom = DomainModel::new(dim, k, h[0])?;
    let grading = Grading { q: h[1], tube_depth: h[2], tube: h[3], sigma_fraction: h[4] };
    let coords = read_f64s(r, n * dim)?;
    let weights = read_f64s(r, n)?;
    let extents = read_f64s(r, n)?;
    let cloud = SampleCloud::from_points(dom, grading, seed, coords, weights)?.with_extents(extents)?;
    Ok((kind, cloud))
}
