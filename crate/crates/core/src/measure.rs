//! Finite positive measures on the boundary sphere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{random_unit_vector, DomainModel};
use crate::numerics::{norm, pairwise_sum};

/// A weighted boundary point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub mass: f64,
}

/// Where a measure is carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Empty,
    Sigma,
    OffSigma,
    Mixed,
}

/// Dirac combination plus an optional discretized density.
///
/// The density part is stored as equal-weight quadrature nodes on its carrier
/// (`Σ` or `∂Ω`); its mass is the sum of the node masses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryMeasure {
    pub dim: usize,
    pub atoms: Vec<Atom>,
    pub density: Vec<Atom>,
}

const ON_SPHERE_TOL: f64 = 1e-9;
const ON_SIGMA_TOL: f64 = 1e-9;

impl BoundaryMeasure {
    pub fn zero(dim: usize) -> Self {
        Self { dim, atoms: Vec::new(), density: Vec::new() }
    }

    pub fn dirac(point: Vec<f64>, mass: f64) -> Result<Self> {
        let mut m = Self::zero(point.len());
        m.add_atom(point, mass)?;
        Ok(m)
    }

    pub fn add_atom(&mut self, point: Vec<f64>, mass: f64) -> Result<()> {
        check_boundary_point(&point, self.dim)?;
        if !(mass >= 0.0 && mass.is_finite()) {
            return invalid(format!("atom mass must be finite and nonnegative, got {mass}"));
        }
        self.atoms.push(Atom { point, mass });
        Ok(())
    }

    /// Uniform measure of total mass `mass` on `Σ`, discretized by `nodes`
    /// seeded samples with equal weights. For `k = 0` this is a single atom.
    pub fn uniform_on_sigma(domain: &DomainModel, mass: f64, nodes: usize, seed: u64) -> Result<Self> {
        if !(mass >= 0.0) {
            return Err(Error::Domain("mass must be nonnegative".into()));
        }
        let mut m = Self::zero(domain.dim);
        if domain.sigma_dim == 0 {
            m.add_atom(domain.sigma_anchor(), mass)?;
            return Ok(m);
        }
        if nodes == 0 {
            return Err(Error::Domain("need at least one node".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k1 = domain.sigma_dim + 1;
        for _ in 0..nodes {
            let mut p = random_unit_vector(k1, &mut rng);
            p.resize(domain.dim, 0.0);
            m.density.push(Atom { point: p, mass: mass / nodes as f64 });
        }
        Ok(m)
    }

    /// Every atom and density node.
    pub fn nodes(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter().chain(self.density.iter())
    }

    pub fn total_mass(&self) -> f64 {
        let masses: Vec<f64> = self.nodes().map(|a| a.mass).collect();
        pairwise_sum(&masses)
    }

    pub fn is_zero(&self) -> bool {
        self.nodes().all(|a| a.mass == 0.0)
    }

    pub fn support(&self, domain: &DomainModel) -> Support {
        let (mut on, mut off) = (false, false);
        for a in self.nodes().filter(|a| a.mass > 0.0) {
            if domain.on_sigma(&a.point, ON_SIGMA_TOL) {
                on = true;
            } else {
                off = true;
            }
        }
        match (on, off) {
            (false, false) => Support::Empty,
            (true, false) => Support::Sigma,
            (false, true) => Support::OffSigma,
            (true, true) => Support::Mixed,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let scale = |v: &[Atom]| v.iter().map(|a| Atom { point: a.point.clone(), mass: a.mass * c }).collect();
        Self { dim: self.dim, atoms: scale(&self.atoms), density: scale(&self.density) }
    }

    /// Split into `(1_E ν, 1_{E^c} ν)`.
    pub fn restrict<F: Fn(&[f64]) -> bool>(&self, inside: F) -> (Self, Self) {
        let mut a = Self::zero(self.dim);
        let mut b = Self::zero(self.dim);
        for at in &self.atoms {
            if inside(&at.point) { &mut a } else { &mut b }.atoms.push(at.clone());
        }
        for at in &self.density {
            if inside(&at.point) { &mut a } else { &mut b }.density.push(at.clone());
        }
        (a, b)
    }

    /// Parse `dirac:x1,x2,...[:mass]`, `sigma:mass[:nodes]` or `zero`,
    /// several specs joined by `+`.
    pub fn parse(spec: &str, domain: &DomainModel) -> Result<Self> {
        let mut m = Self::zero(domain.dim);
        for part in spec.split('+').map(str::trim).filter(|s| !s.is_empty()) {
            let fields: Vec<&str> = part.split(':').collect();
            match fields[0] {
                "zero" => {}
                "dirac" => {
                    let pt = fields.get(1).ok_or_else(|| Error::Config("dirac needs coordinates".into()))?;
                    let point = parse_point(pt)?;
                    let mass = match fields.get(2) {
                        Some(s) => parse_f64(s)?,
                        None => 1.0,
                    };
                    if point.len() != domain.dim {
                        return Err(Error::Config(format!(
                            "dirac point has {} coordinates, domain has {}",
                            point.len(),
                            domain.dim
                        )));
                    }
                    m.add_atom(point, mass)?;
                }
                "sigma" => {
                    let mass = parse_f64(fields.get(1).copied().unwrap_or("1"))?;
                    let nodes = match fields.get(2) {
                        Some(s) => s.parse().map_err(|_| Error::Config(format!("bad node count {s}")))?,
                        None => 256,
                    };
                    let u = Self::uniform_on_sigma(domain, mass, nodes, 0)?;
                    m.atoms.extend(u.atoms);
                    m.density.extend(u.density);
                }
                other => return Err(Error::Config(format!("unknown measure kind {other}"))),
            }
        }
        Ok(m)
    }
}

fn check_boundary_point(p: &[f64], dim: usize) -> Result<()> {
    if p.len() != dim {
        return invalid(format!("boundary point has {} coordinates, expected {dim}", p.len()));
    }
    if (norm(p) - 1.0).abs() > ON_SPHERE_TOL {
        return invalid(format!("point {p:?} is not on the unit sphere"));
    }
    Ok(())
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Config(format!("cannot parse number {s:?}")))
}

pub(crate) fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_f64).collect()
}
