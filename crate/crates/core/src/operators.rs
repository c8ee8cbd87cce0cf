//! Quadrature realizations of the potential operators `𝔾`, `𝕂` and `𝔑_α`.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::cloud::{Field, SampleCloud};
use crate::error::{invalid, Error, Result};
use crate::kernels::{Kernel, KernelVariant, SiteGeom};
use crate::measure::BoundaryMeasure;
use crate::numerics::{dist, pairwise_sum, smoothstep5, sphere_area};
use crate::polar::{direction_rule, radial_rule};

/// Largest dense matrix kept in memory, in bytes.
pub const MATRIX_BUDGET: usize = 2 << 30;

/// Atoms closer than this to a cloud point are nudged inward.
const ATOM_CLEARANCE: f64 = 1e-12;

/// Near-field radius in units of the local cell radius, away from `Σ`.
pub const NEAR_FACTOR: f64 = 5.0;

/// Radial octaves resolved inside the near-field ball.
const NEAR_OCTAVES: i32 = 12;

/// Near-field cutoff: 1 on `[0, 1/2]`, 0 beyond 1, quintic in between.
fn near_cut(t: f64) -> f64 {
    1.0 - smoothstep5(2.0 * t - 1.0)
}

/// Treatment of the `j = i` term when source and target clouds coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagPolicy {
    /// Drop the self term.
    Exclude,
    /// Split the kernel with a smooth cutoff of radius `NEAR_FACTOR` cell
    /// radii. The far part is summed over the cloud; the near part is
    /// integrated on a local polar grid against the value at the target.
    CellCorrection,
}

/// A volume kernel bound to a cloud.
#[derive(Debug)]
pub struct OperatorHandle {
    kernel: Kernel,
    cloud: Arc<SampleCloud>,
    diag: DiagPolicy,
    near_factor: f64,
    cache: bool,
    diag_terms: OnceLock<Vec<f64>>,
    near_rule: OnceLock<NearRule>,
    matrix: OnceLock<Option<Vec<f32>>>,
}

impl OperatorHandle {
    pub fn new(kernel: Kernel, cloud: Arc<SampleCloud>, diag: DiagPolicy) -> Result<Self> {
        if kernel.variant().is_boundary_kernel() {
            return invalid("boundary kernels act on measures, not on fields");
        }
        if kernel.domain() != &cloud.domain {
            return invalid("kernel and cloud live on different domains");
        }
        Ok(Self {
            kernel,
            cloud,
            diag,
            near_factor: NEAR_FACTOR,
            cache: true,
            diag_terms: OnceLock::new(),
            near_rule: OnceLock::new(),
            matrix: OnceLock::new(),
        })
    }

    /// Disable the dense-matrix cache (every application re-evaluates the kernel).
    pub fn without_cache(mut self) -> Self {
        self.cache = false;
        self
    }

    /// Near-field radius in cell radii (default [`NEAR_FACTOR`]).
    pub fn with_near_factor(mut self, factor: f64) -> Result<Self> {
        if !(factor >= 1.0 && factor.is_finite()) {
            return invalid(format!("near factor must be at least 1, got {factor}"));
        }
        self.near_factor = factor;
        Ok(self)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn cloud(&self) -> &Arc<SampleCloud> {
        &self.cloud
    }

    /// Near-field radius at point `i`, kept below `d_Σ / 2` where the cloud
    /// allows it.
    fn near_radius(&self, i: usize) -> f64 {
        let c = &self.cloud;
        let rho = c.cell_radius(i);
        (self.near_factor * rho).max(c.extent(i)).min(0.5 * c.geom(i).ds).max(1.5 * rho)
    }

    /// `∫_Ω k(x, y) χ(|x - y| / R) dy` on a local polar grid.
    fn near_mass(&self, x: &[f64], gx: SiteGeom, big_r: f64) -> f64 {
        let rule = self.near_rule.get_or_init(|| NearRule::new(self.cloud.dim()));
        let dom = &self.cloud.domain;
        let mut y = vec![0.0; x.len()];
        let mut terms = Vec::with_capacity(rule.radii.len() * rule.dirs.len());
        for (t, tw) in &rule.radii {
            let r = t * big_r;
            let cut = near_cut(*t) * tw * big_r.powi(dom.dim as i32);
            for (d, dw) in &rule.dirs {
                y.iter_mut().zip(x.iter().zip(d)).for_each(|(yi, (xi, di))| *yi = xi + r * di);
                if dom.is_interior(&y) {
                    terms.push(cut * dw * self.kernel.eval_geom(r, gx, SiteGeom::of(dom, &y)));
                }
            }
        }
        pairwise_sum(&terms)
    }

    fn diag_terms(&self) -> &[f64] {
        self.diag_terms.get_or_init(|| {
            let c = &self.cloud;
            match self.diag {
                DiagPolicy::Exclude => vec![0.0; c.len()],
                DiagPolicy::CellCorrection => (0..c.len())
                    .into_par_iter()
                    .map(|i| self.near_mass(c.point(i), c.geom(i), self.near_radius(i)))
                    .collect(),
            }
        })
    }

    fn matrix(&self) -> Option<&[f32]> {
        if !self.cache {
            return None;
        }
        self.matrix
            .get_or_init(|| {
                let n = self.cloud.len();
                if n.saturating_mul(n).saturating_mul(4) > MATRIX_BUDGET {
                    return None;
                }
                let diag = self.diag_terms();
                let mut m = vec![0f32; n * n];
                m.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                    for (j, e) in row.iter_mut().enumerate() {
                        *e = self.entry(i, j, diag) as f32;
                    }
                });
                Some(m)
            })
            .as_deref()
    }

    #[inline]
    fn entry(&self, i: usize, j: usize, diag: &[f64]) -> f64 {
        if i == j {
            return diag[i];
        }
        let c = &self.cloud;
        let r = dist(c.point(i), c.point(j));
        if r == 0.0 {
            return 0.0;
        }
        let far = match self.diag {
            DiagPolicy::Exclude => 1.0,
            DiagPolicy::CellCorrection => 1.0 - near_cut(r / self.near_radius(i)),
        };
        if far == 0.0 {
            return 0.0;
        }
        far * c.weights()[j] * self.kernel.eval_geom(r, c.geom(i), c.geom(j))
    }

    /// `(Tf)(x_i) = Σ_j w_j k(x_i, x_j) f_j`, self term per the diagonal policy.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        let n = self.cloud.len();
        if f.len() != n {
            return Err(Error::Format(format!("field length {} != cloud size {n}", f.len())));
        }
        let out: Vec<f64> = match self.matrix() {
            Some(m) => m.par_chunks(n).map(|row| row_dot(row, f)).collect(),
            None => {
                let diag = self.diag_terms();
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let terms: Vec<f64> = (0..n).map(|j| self.entry(i, j, diag) * f[j]).collect();
                        pairwise_sum(&terms)
                    })
                    .collect()
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("operator output is not finite".into()));
        }
        Ok(out)
    }

    /// Rows `i ∈ rows` of `Tf` evaluated in full precision without the cache.
    pub fn apply_rows(&self, rows: &[usize], f: &[f64]) -> Result<Vec<f64>> {
        let n = self.cloud.len();
        if f.len() != n {
            return Err(Error::Format(format!("field length {} != cloud size {n}", f.len())));
        }
        if let Some(&i) = rows.iter().find(|&&i| i >= n) {
            return invalid(format!("row {i} out of range"));
        }
        let diag = self.diag_terms();
        let out: Vec<f64> = rows
            .par_iter()
            .map(|&i| {
                let terms: Vec<f64> = (0..n).map(|j| self.entry(i, j, diag) * f[j]).collect();
                pairwise_sum(&terms)
            })
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("operator output is not finite".into()));
        }
        Ok(out)
    }

    /// Evaluate at arbitrary interior targets. With the cell correction the
    /// near part uses a cutoff-weighted local average of `f`.
    pub fn apply_at(&self, targets: &[Vec<f64>], f: &[f64]) -> Result<Vec<f64>> {
        let c = &self.cloud;
        if f.len() != c.len() {
            return Err(Error::Format(format!("field length {} != cloud size {}", f.len(), c.len())));
        }
        let dom = c.domain;
        let out: Vec<f64> = targets
            .par_iter()
            .map(|x| {
                let gx = SiteGeom::of(&dom, x);
                let rs: Vec<f64> = (0..c.len()).map(|j| dist(x, c.point(j))).collect();
                if self.diag == DiagPolicy::Exclude {
                    let terms: Vec<f64> = (0..c.len())
                        .filter(|&j| rs[j] > 0.0)
                        .map(|j| c.weights()[j] * self.kernel.eval_geom(rs[j], gx, c.geom(j)) * f[j])
                        .collect();
                    return pairwise_sum(&terms);
                }
                let nearest = (0..c.len()).min_by(|&a, &b| rs[a].total_cmp(&rs[b])).unwrap_or(0);
                let big_r = self.near_radius(nearest);
                let (mut num, mut den) = (Vec::new(), Vec::new());
                let mut terms = Vec::with_capacity(c.len() + 1);
                for j in 0..c.len() {
                    let t = rs[j] / big_r;
                    let cut = near_cut(t);
                    if cut > 0.0 {
                        num.push(cut * c.weights()[j] * f[j]);
                        den.push(cut * c.weights()[j]);
                    }
                    if cut < 1.0 {
                        terms.push((1.0 - cut) * c.weights()[j] * self.kernel.eval_geom(rs[j], gx, c.geom(j)) * f[j]);
                    }
                }
                let den = pairwise_sum(&den);
                if den > 0.0 {
                    terms.push(pairwise_sum(&num) / den * self.near_mass(x, gx, big_r));
                }
                pairwise_sum(&terms)
            })
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("operator output is not finite".into()));
        }
        Ok(out)
    }
}

/// `Σ row_j f_j` in blocks of four lanes, with block sums combined pairwise.
fn row_dot(row: &[f32], f: &[f64]) -> f64 {
    const BLOCK: usize = 256;
    let blocks: Vec<f64> = row
        .chunks(BLOCK)
        .zip(f.chunks(BLOCK))
        .map(|(a, b)| {
            let mut acc = [0.0f64; 4];
            let mut ia = a.chunks_exact(4);
            let mut ib = b.chunks_exact(4);
            for (x, y) in (&mut ia).zip(&mut ib) {
                for l in 0..4 {
                    acc[l] += x[l] as f64 * y[l];
                }
            }
            let tail: f64 = ia.remainder().iter().zip(ib.remainder()).map(|(x, y)| *x as f64 * y).sum();
            (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
        })
        .collect();
    pairwise_sum(&blocks)
}

/// Unit-scale polar rule for near-field masses.
#[derive(Debug)]
struct NearRule {
    /// `(t, weight)` with `∫_0^1 g(t) t^{N-1} dt ≈ Σ weight g(t)`.
    radii: Vec<(f64, f64)>,
    dirs: Vec<(Vec<f64>, f64)>,
}

impl NearRule {
    fn new(dim: usize) -> Self {
        let mut axis = vec![0.0; dim];
        axis[0] = 1.0;
        let n_az = if dim == 3 { 12 } else { 32 };
        Self {
            radii: radial_rule(dim, 2f64.powi(-NEAR_OCTAVES), 1.0, 3),
            dirs: direction_rule(&axis, std::f64::consts::PI, 10, n_az, 17),
        }
    }
}

/// `𝔾[f]` on the handle's cloud.
pub fn green_op(handle: &OperatorHandle, f: &Field) -> Result<Field> {
    if !Arc::ptr_eq(&f.cloud, handle.cloud()) && *f.cloud != **handle.cloud() {
        return invalid("field lives on a different cloud");
    }
    let v = handle.apply(&f.values)?;
    Field::new(handle.cloud().clone(), v)
}

/// `∫ k(x_i, ξ) dν(ξ)` for a boundary kernel (or `N_α` extended to `∂Ω`).
pub fn measure_potential(kernel: &Kernel, cloud: &Arc<SampleCloud>, nu: &BoundaryMeasure) -> Result<Field> {
    let dom = cloud.domain;
    if nu.dim != dom.dim {
        return invalid("measure dimension does not match the cloud");
    }
    let nodes: Vec<(&[f64], f64, SiteGeom)> = nu
        .nodes()
        .filter(|a| a.mass > 0.0)
        .map(|a| (a.point.as_slice(), a.mass, SiteGeom { d: 0.0, ds: dom.d_sigma(&a.point) }))
        .collect();
    let mut nudged = 0usize;
    let values: Vec<f64> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let x = cloud.point(i);
            let gx = cloud.geom(i);
            let terms: Vec<f64> = nodes
                .iter()
                .map(|(xi, m, gxi)| {
                    let r = dist(x, xi).max(ATOM_CLEARANCE);
                    m * kernel.eval_geom(r, gx, *gxi)
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    for (xi, _, _) in &nodes {
        if (0..cloud.len()).any(|i| dist(cloud.point(i), xi) < ATOM_CLEARANCE) {
            nudged += 1;
        }
    }
    if nudged > 0 {
        log::warn!("{nudged} atom(s) within {ATOM_CLEARANCE} of a cloud point; distance clamped");
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("measure potential is not finite".into()));
    }
    Field::new(cloud.clone(), values)
}

/// `𝕂[ν]` with the Martin estimate.
pub fn martin_op(kernel: &Kernel, cloud: &Arc<SampleCloud>, nu: &BoundaryMeasure) -> Result<Field> {
    if kernel.variant() != KernelVariant::Martin {
        return invalid("martin_op needs the Martin kernel");
    }
    measure_potential(kernel, cloud, nu)
}

/// `𝔑_α[ω]` for `dω = d_∂Ω^b d_Σ^θ dx`.
pub fn nalpha_op(handle: &OperatorHandle, b: f64, theta: f64) -> Result<Field> {
    let dom = handle.cloud().domain;
    if handle.kernel().variant() != KernelVariant::NAlpha {
        return invalid("nalpha_op needs the N_α kernel");
    }
    check_density_exponents(dom.dim, dom.sigma_dim, b, theta)?;
    let c = handle.cloud();
    let density: Vec<f64> = (0..c.len())
        .map(|i| {
            let g = c.geom(i);
            g.d.powf(b) * g.ds.powf(theta)
        })
        .collect();
    let v = handle.apply(&density)?;
    Field::new(c.clone(), v)
}

/// Hypotheses `b > 0`, `θ + b > k - N` of the weighted-volume lemma.
pub fn check_density_exponents(dim: usize, k: usize, b: f64, theta: f64) -> Result<()> {
    if !(b > 0.0) {
        return invalid(format!("density exponent b must be positive, got {b}"));
    }
    if !(theta + b > k as f64 - dim as f64) {
        return invalid(format!("need θ + b > k - N, got θ = {theta}, b = {b}"));
    }
    Ok(())
}

/// Kernel mass of the Newtonian profile over an equivalent ball of radius
/// `rho`: `∫_{B_ρ} |y|^{2-N} dy`.
pub fn newtonian_cell(dim: usize, rho: f64) -> f64 {
    sphere_area(dim) * rho * rho / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{make_cloud, Grading};
    use crate::geometry::{DomainModel, SpectralParams};
    use crate::kernels::KernelSpec;

    fn cloud(n: usize, k: usize, res: usize, seed: u64) -> Arc<SampleCloud> {
        let d = DomainModel::with_default_beta(n, k).unwrap();
        Arc::new(make_cloud(&d, res, Grading::default(), seed).unwrap())
    }

    #[test]
    fn green_linear_and_zero() {
        let c = cloud(3, 0, 2000, 1);
        let p = SpectralParams::new(&c.domain, 2.0).unwrap();
        let g = Kernel::new(KernelSpec::green(c.domain, p)).unwrap();
        let h = OperatorHandle::new(g, c.clone(), DiagPolicy::CellCorrection).unwrap();
        let z = green_op(&h, &Field::zeros(c.clone())).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
        let f = Field::from_fn(c.clone(), |x, _| 1.0 + x[0]);
        let g2 = Field::from_fn(c.clone(), |x, _| x[1] * x[1]);
        let comb =
            Field::new(c.clone(), f.values.iter().zip(&g2.values).map(|(a, b)| 2.0 * a + 3.0 * b).collect()).unwrap();
        let (a, b, ab) = (green_op(&h, &f).unwrap(), green_op(&h, &g2).unwrap(), green_op(&h, &comb).unwrap());
        for i in 0..c.len() {
            let lin = 2.0 * a.values[i] + 3.0 * b.values[i];
            assert!((ab.values[i] - lin).abs() <= 1e-6 * lin.abs().max(1e-300));
        }
    }

    #[test]
    fn cached_and_direct_agree() {
        let c = cloud(3, 0, 1500, 2);
        let p = SpectralParams::new(&c.domain, 2.0).unwrap();
        let k = Kernel::new(KernelSpec::n_alpha(c.domain, p, 2.0)).unwrap();
        let h1 = OperatorHandle::new(k.clone(), c.clone(), DiagPolicy::CellCorrection).unwrap();
        let h2 = OperatorHandle::new(k, c.clone(), DiagPolicy::CellCorrection).unwrap().without_cache();
        let f: Vec<f64> = (0..c.len()).map(|i| c.geom(i).d).collect();
        let (a, b) = (h1.apply(&f).unwrap(), h2.apply(&f).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * y.abs());
        }
    }

    #[test]
    fn martin_single_and_double_atoms() {
        let c = cloud(3, 0, 1500, 3);
        let p = SpectralParams::new(&c.domain, 2.0).unwrap();
        let k = Kernel::new(KernelSpec::martin(c.domain, p)).unwrap();
        let z = c.domain.sigma_anchor();
        let zero = martin_op(&k, &c, &BoundaryMeasure::zero(3)).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        let one = martin_op(&k, &c, &BoundaryMeasure::dirac(z.clone(), 2.5).unwrap()).unwrap();
        for i in 0..c.len() {
            let exact = 2.5 * k.eval(c.point(i), &z).unwrap();
            assert!((one.values[i] - exact).abs() <= 1e-12 * exact, "{} {} {:?}", one.values[i], exact, c.point(i));
        }
        let other = vec![0.0, 0.0, 1.0];
        let two = {
            let mut m = BoundaryMeasure::dirac(z.clone(), 2.5).unwrap();
            m.add_atom(other.clone(), 1.0).unwrap();
            martin_op(&k, &c, &m).unwrap()
        };
        let single = martin_op(&k, &c, &BoundaryMeasure::dirac(other, 1.0).unwrap()).unwrap();
        for i in 0..c.len() {
            let s = one.values[i] + single.values[i];
            assert!((two.values[i] - s).abs() <= 1e-12 * s);
        }
    }

    #[test]
    fn nalpha_hypotheses_enforced() {
        let c = cloud(3, 0, 1000, 4);
        let p = SpectralParams::new(&c.domain, 2.0).unwrap();
        let k = Kernel::new(KernelSpec::n_alpha(c.domain, p, 2.0)).unwrap();
        let h = OperatorHandle::new(k, c.clone(), DiagPolicy::CellCorrection).unwrap();
        assert!(nalpha_op(&h, 0.0, 0.0).is_err());
        assert!(nalpha_op(&h, 1.0, -4.5).is_err());
        assert!(nalpha_op(&h, 1.0, 0.0).unwrap().values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn newtonian_profile_at_center() {
        assert!((newtonian_cell(3, 0.1) - 2.0 * std::f64::consts::PI * 0.01).abs() < 1e-15);
    }
}
