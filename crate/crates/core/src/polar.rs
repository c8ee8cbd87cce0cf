//! Local polar quadrature around a point: log-graded radii, Gauss polar
//! angles about an axis, and an azimuthal rule on `S^{N-2}`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::random_unit_vector;
use crate::numerics::{dot, gauss_legendre_on, norm, sphere_area};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarSpec {
    pub r_min: f64,
    pub r_max: f64,
    /// Gauss nodes per radial octave (in `ln r`).
    pub per_octave: usize,
    /// Polar aperture about the axis, in `(0, π]`.
    pub theta_max: f64,
    pub n_theta: usize,
    pub n_azimuth: usize,
    pub seed: u64,
}

/// Nodes and weights of `∫ f dy` over `{r_min < |y - c| < r_max, ∠(y - c, axis) < θ_max}`.
#[derive(Debug, Clone)]
pub struct PolarNodes {
    pub dim: usize,
    pub coords: Vec<f64>,
    pub weights: Vec<f64>,
    /// Distance to the center, per node.
    pub radii: Vec<f64>,
}

impl PolarNodes {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
}

/// Orthonormal basis of `axis^⊥`.
pub(crate) fn complement_basis(axis: &[f64]) -> Vec<Vec<f64>> {
    let n = axis.len();
    let mut basis: Vec<Vec<f64>> = vec![axis.to_vec()];
    for i in 0..n {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let l = norm(&v);
        if l > 1e-8 {
            v.iter_mut().for_each(|x| *x /= l);
            basis.push(v);
        }
        if basis.len() == n {
            break;
        }
    }
    basis.remove(0);
    basis
}

/// Unit directions on `S^{N-2}` with weights summing to `|S^{N-2}|`.
fn azimuth_rule(dim: usize, m: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
    if dim == 2 {
        return vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)];
    }
    if dim == 3 {
        return (0..m)
            .map(|j| {
                let a = 2.0 * PI * (j as f64 + 0.5) / m as f64;
                (vec![a.cos(), a.sin()], 2.0 * PI / m as f64)
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = sphere_area(dim - 1);
    let half = m.div_ceil(2);
    let mut out = Vec::with_capacity(2 * half);
    for _ in 0..half {
        let v = random_unit_vector(dim - 1, &mut rng);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        out.push((v, area / (2 * half) as f64));
        out.push((neg, area / (2 * half) as f64));
    }
    out
}

/// Unit directions within `θ_max` of `axis`, weighted by solid angle.
pub fn direction_rule(
    axis: &[f64],
    theta_max: f64,
    n_theta: usize,
    n_azimuth: usize,
    seed: u64,
) -> Vec<(Vec<f64>, f64)> {
    let n = axis.len();
    let an = norm(axis);
    let axis: Vec<f64> = axis.iter().map(|v| v / an).collect();
    let basis = complement_basis(&axis);
    let az = azimuth_rule(n, n_azimuth, seed);
    let (th, thw) = gauss_legendre_on(n_theta, 0.0, theta_max);
    let mut dirs = Vec::with_capacity(th.len() * az.len());
    for (t, tw) in th.iter().zip(&thw) {
        let (s, c) = t.sin_cos();
        let ang = tw * s.powi(n as i32 - 2);
        for (a, aw) in &az {
            let mut d: Vec<f64> = axis.iter().map(|v| v * c).collect();
            for (coef, b) in a.iter().zip(&basis) {
                d.iter_mut().zip(b).for_each(|(x, y)| *x += s * coef * y);
            }
            dirs.push((d, ang * aw));
        }
    }
    dirs
}

/// Radii in `[r_min, r_max]` with weights for `∫ g(r) r^{N-1} dr`, Gauss in
/// `ln r` on each octave.
pub fn radial_rule(dim: usize, r_min: f64, r_max: f64, per_octave: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut hi = r_max;
    while hi > r_min * (1.0 + 1e-12) {
        let lo = (hi * 0.5).max(r_min);
        let (ls, lw) = gauss_legendre_on(per_octave, lo.ln(), hi.ln());
        for (l, w) in ls.iter().zip(&lw) {
            let r = l.exp();
            out.push((r, w * r.powi(dim as i32)));
        }
        hi = lo;
    }
    out
}

/// Build polar nodes around `center`; nodes failing `keep` are dropped.
pub fn polar_nodes<F: Fn(&[f64]) -> bool>(center: &[f64], axis: &[f64], spec: &PolarSpec, keep: F) -> PolarNodes {
    let n = center.len();
    let dirs = direction_rule(axis, spec.theta_max, spec.n_theta, spec.n_azimuth, spec.seed);
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    let mut radii = Vec::new();
    for (r, rw) in radial_rule(n, spec.r_min, spec.r_max, spec.per_octave) {
        for (d, dw) in &dirs {
            let y: Vec<f64> = center.iter().zip(d).map(|(c, v)| c + r * v).collect();
            if keep(&y) {
                coords.extend_from_slice(&y);
                weights.push(rw * dw);
                radii.push(r);
            }
        }
    }
    PolarNodes { dim: n, coords, weights, radii }
}
