//! Monotone fixed-point solvers for the source and absorption problems and
//! the `σ`-threshold search.
//!
//! The source problem `u = 𝔾[u^p] + σ𝕂[ν]` is solved in the variable
//! `v = u / (d_∂Ω d_Σ^{-a})`, where it reads
//! `v = 𝔑[(d_∂Ω d_Σ^{-a})^{p+1} v^p] + σ𝔑[ν]` with `𝔑 = 𝔑_{2α₋}`, `a = α₋`
//! (or `𝔑 = 𝔑_{N-ε}`, `a = N/2` when `k = 0`, `μ = N²/4`).

use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cloud::{Field, SampleCloud};
use crate::error::{invalid, Error, Result};
use crate::geometry::{DomainModel, SpectralParams};
use crate::kernels::{Kernel, KernelSpec, KernelVariant, SiteGeom};
use crate::measure::BoundaryMeasure;
use crate::numerics::{dist, fit_line, pairwise_sum};
use crate::operators::{measure_potential, DiagPolicy, OperatorHandle};
use crate::report::ext_f64;

/// Lower end of the `σ` search range.
pub const SIGMA_MIN: f64 = 1e-6;
/// Upper end of the `σ` search range.
pub const SIGMA_MAX: f64 = 1e3;
/// Largest shell-mass slope read as non-integrable.
pub const GUARD_SLOPE: f64 = 0.1;
/// The absorption bracket counts as stalled when its width has not dropped
/// below `STALL_RATIO` times its value `STALL_WINDOW` steps earlier.
const STALL_WINDOW: usize = 10;
const STALL_RATIO: f64 = 0.99;
const PERRON_STEPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative pointwise step size at which an iteration has converged.
    pub tol: f64,
    pub blowup: f64,
    pub max_iter: usize,
    /// Update `v ← (1-ω)v + ωT(v)`.
    pub damping: f64,
    pub growth_factor: f64,
    pub growth_window: usize,
    pub probes: usize,
    pub probe_tol: f64,
    /// `ε` of the `𝔑_{N-ε}` kernel in the logarithmic case.
    pub eps: f64,
    /// Test the integrability of the first nonlinear term near the atoms.
    pub guard: bool,
    /// Relative width at which the `σ` bisection stops.
    pub bracket_tol: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            blowup: 1e12,
            max_iter: 500,
            damping: 1.0,
            growth_factor: 1.05,
            growth_window: 20,
            probes: 32,
            probe_tol: 0.05,
            eps: 0.1,
            guard: true,
            bracket_tol: 0.02,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.blowup > 1.0 && self.max_iter > 0) {
            return invalid("solver needs tol > 0, blowup > 1 and max_iter > 0");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return invalid(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if !(self.growth_factor > 1.0 && self.growth_window > 0) {
            return invalid("growth detection needs factor > 1 and a positive window");
        }
        if !(self.bracket_tol > 0.0) {
            return invalid("bracket tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    Diverged,
    MaxIter,
}

/// History and verdict of one fixed-point run.
#[derive(Debug, Clone, Serialize)]
pub struct IterationReport {
    pub status: Status,
    pub iterations: usize,
    /// Last relative pointwise step.
    #[serde(with = "ext_f64")]
    pub residual_sup: f64,
    /// Last step in `L¹(φ)` relative to the iterate.
    #[serde(with = "ext_f64")]
    pub residual_l1_phi: f64,
    /// Sup norm of each iterate.
    pub norm_history: Vec<f64>,
    /// `σ` (source) or the mass scale of `ν` (absorption).
    pub sigma: f64,
    pub damping: f64,
    /// Fitted shell-mass slope of the first nonlinear term near the atoms.
    pub guard_slope: Option<f64>,
    /// Largest relative residual of the fixed-point identity at the probes.
    pub probe_residual: Option<f64>,
    /// Range of `(𝔾[u^p] + σ𝕂[ν]) / u` at the probes with the Green and
    /// Martin estimates.
    pub comparability: Option<[f64; 2]>,
    /// Final width of the alternating absorption bracket.
    pub bracket: Option<f64>,
    pub detail: String,
    #[serde(skip)]
    pub wall_time: f64,
}

impl IterationReport {
    fn new(sigma: f64, damping: f64) -> Self {
        Self {
            status: Status::MaxIter,
            iterations: 0,
            residual_sup: f64::INFINITY,
            residual_l1_phi: f64::INFINITY,
            norm_history: Vec::new(),
            sigma,
            damping,
            guard_slope: None,
            probe_residual: None,
            comparability: None,
            bracket: None,
            detail: String::new(),
            wall_time: 0.0,
        }
    }

    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// Admissible range `1 < p < (α₋+1)/(α₋-1)` (no upper bound when `α₋ ≤ 1`).
pub fn check_source_exponent(params: &SpectralParams, p: f64) -> Result<()> {
    let am = params.alpha_minus;
    if !(p > 1.0) {
        return invalid(format!("source exponent must exceed 1, got {p}"));
    }
    if am > 1.0 && p >= (am + 1.0) / (am - 1.0) {
        return invalid(format!("source exponent {p} exceeds (α₋+1)/(α₋-1) = {}", (am + 1.0) / (am - 1.0)));
    }
    Ok(())
}

/// Discretized source problem, reusable across `σ`.
#[derive(Debug)]
pub struct SourceProblem {
    pub domain: DomainModel,
    pub params: SpectralParams,
    pub p: f64,
    pub opts: SolverOptions,
    nu: BoundaryMeasure,
    cloud: Arc<SampleCloud>,
    handle: OperatorHandle,
    /// `𝔑[ν]` at the cloud points.
    source: Vec<f64>,
    /// `d_∂Ω d_Σ^{-a}` at the cloud points.
    phi: Vec<f64>,
    /// `φ^{p+1}`.
    weight: Vec<f64>,
    guard: Option<std::result::Result<f64, String>>,
}

impl SourceProblem {
    pub fn new(
        domain: &DomainModel,
        params: &SpectralParams,
        p: f64,
        nu: &BoundaryMeasure,
        cloud: Arc<SampleCloud>,
        opts: SolverOptions,
    ) -> Result<Self> {
        opts.validate()?;
        check_source_exponent(params, p)?;
        if cloud.domain != *domain {
            return invalid("cloud lives on a different domain");
        }
        if nu.nodes().any(|a| a.mass < 0.0) {
            return invalid("measure must be nonnegative");
        }
        let log_case = params.is_point_log_case(domain);
        let (spec, a) = if log_case {
            (KernelSpec::eps(*domain, *params, KernelVariant::NNminusEps, opts.eps), domain.dim as f64 / 2.0)
        } else {
            (KernelSpec::n_alpha(*domain, *params, 2.0 * params.alpha_minus), params.alpha_minus)
        };
        let kernel = Kernel::new(spec)?;
        let source = measure_potential(&kernel, &cloud, nu)?.values;
        let handle = OperatorHandle::new(kernel, cloud.clone(), DiagPolicy::CellCorrection)?;
        let phi: Vec<f64> = (0..cloud.len())
            .map(|i| {
                let g = cloud.geom(i);
                g.d * g.ds.powf(-a)
            })
            .collect();
        let weight = phi.iter().map(|f| f.powf(p + 1.0)).collect();
        let mut prob = Self {
            domain: *domain,
            params: *params,
            p,
            opts,
            nu: nu.clone(),
            cloud,
            handle,
            source,
            phi,
            weight,
            guard: None,
        };
        if opts.guard && !nu.is_zero() {
            prob.guard = Some(prob.shell_slope().map_err(|e| e.to_string()));
        }
        Ok(prob)
    }

    pub fn cloud(&self) -> &Arc<SampleCloud> {
        &self.cloud
    }

    /// Slope of `log₂` dyadic shell masses of `φ^{p+1} 𝔑[ν]^p` around the
    /// atoms against `log₂` of the shell radius. The first nonlinear term is
    /// finite near the atoms iff the slope is positive.
    fn shell_slope(&self) -> Result<f64> {
        let c = &self.cloud;
        let atoms: Vec<&[f64]> = self.nu.atoms.iter().filter(|a| a.mass > 0.0).map(|a| a.point.as_slice()).collect();
        if atoms.is_empty() {
            return Err(Error::Inconclusive("no atoms to test".into()));
        }
        const SHELLS: usize = 40;
        const MIN_POINTS: usize = 16;
        let mut slopes = Vec::new();
        for z in atoms {
            let mut mass = vec![0.0; SHELLS];
            let mut count = vec![0usize; SHELLS];
            for i in 0..c.len() {
                let r = dist(c.point(i), z);
                // shell j holds 2^{-j-2} ≤ r < 2^{-j-1}
                let j = (-r.log2()).floor() as i64 - 1;
                if j >= 0 && (j as usize) < SHELLS {
                    let j = j as usize;
                    mass[j] += c.weights()[i] * self.weight[i] * self.source[i].powf(self.p);
                    count[j] += 1;
                }
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = (1..SHELLS)
                .filter(|&j| count[j] >= MIN_POINTS && mass[j] > 0.0)
                .map(|j| (-(j as f64) - 1.5, mass[j].log2()))
                .unzip();
            if xs.len() < 4 {
                return Err(Error::Inconclusive(format!("only {} populated shells", xs.len())));
            }
            let (s, _) = fit_line(&xs, &ys).ok_or_else(|| Error::Inconclusive("degenerate fit".into()))?;
            slopes.push(s);
        }
        Ok(slopes.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// `T(v) = 𝔑[φ^{p+1} v^p] + σ𝔑[ν]`.
    fn step(&self, v: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let f: Vec<f64> = v.iter().zip(&self.weight).map(|(x, w)| w * x.powf(self.p)).collect();
        let mut t = self.handle.apply(&f)?;
        t.iter_mut().zip(&self.source).for_each(|(a, s)| *a += sigma * s);
        Ok(t)
    }

    fn l1_phi(&self, v: &[f64]) -> f64 {
        let terms: Vec<f64> =
            v.iter().enumerate().map(|(i, x)| self.cloud.weights()[i] * self.phi[i] * x.abs()).collect();
        pairwise_sum(&terms)
    }

    /// Increasing Picard iteration from `start` (default `σ𝔑[ν]`), which must
    /// be a subsolution. Returns `v` and the report.
    pub fn solve_v(&self, sigma: f64, start: Option<&[f64]>) -> Result<(Vec<f64>, IterationReport)> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return invalid(format!("σ must be finite and nonnegative, got {sigma}"));
        }
        let clock = Instant::now();
        let o = &self.opts;
        let n = self.cloud.len();
        let mut rep = IterationReport::new(sigma, o.damping);
        if sigma == 0.0 || self.nu.is_zero() {
            rep.status = Status::Converged;
            rep.iterations = 1;
            rep.residual_sup = 0.0;
            rep.residual_l1_phi = 0.0;
            rep.norm_history.push(0.0);
            rep.detail = "zero data".into();
            rep.wall_time = clock.elapsed().as_secs_f64();
            return Ok((vec![0.0; n], rep));
        }
        if let Some(g) = &self.guard {
            match g {
                Ok(s) => {
                    rep.guard_slope = Some(*s);
                    if *s <= GUARD_SLOPE {
                        rep.status = Status::Diverged;
                        rep.detail =
                            format!("first nonlinear term is not integrable near the atoms (shell slope {s:.3})");
                        rep.wall_time = clock.elapsed().as_secs_f64();
                        return Ok((self.source.iter().map(|s| sigma * s).collect(), rep));
                    }
                }
                Err(msg) => rep.detail = format!("integrability guard skipped: {msg}"),
            }
        }
        let mut v: Vec<f64> = match start {
            Some(s) if s.len() == n => s.to_vec(),
            Some(_) => return invalid("start vector has the wrong length"),
            None => self.source.iter().map(|s| sigma * s).collect(),
        };
        let mut growing = 0usize;
        for it in 1..=o.max_iter {
            let t = self.step(&v, sigma)?;
            if let Some(i) = (0..n).find(|&i| t[i] < v[i]) {
                return Err(Error::Invariant(format!(
                    "Picard step {it} decreased the iterate at point {i}: {} -> {}",
                    v[i], t[i]
                )));
            }
            let next: Vec<f64> = if o.damping == 1.0 {
                t
            } else {
                v.iter().zip(&t).map(|(a, b)| (1.0 - o.damping) * a + o.damping * b).collect()
            };
            let mut rel: f64 = 0.0;
            let mut growth: f64 = 1.0;
            for i in 0..n {
                if next[i] > 0.0 {
                    rel = rel.max((next[i] - v[i]) / next[i]);
                }
                if v[i] > 0.0 {
                    growth = growth.max(next[i] / v[i]);
                }
            }
            let diff: Vec<f64> = next.iter().zip(&v).map(|(a, b)| a - b).collect();
            rep.residual_sup = rel;
            rep.residual_l1_phi = self.l1_phi(&diff) / self.l1_phi(&next).max(f64::MIN_POSITIVE);
            let sup = next.iter().cloned().fold(0.0, f64::max);
            rep.norm_history.push(sup);
            rep.iterations = it;
            v = next;
            if !sup.is_finite() || sup > o.blowup {
                rep.status = Status::Diverged;
                rep.detail = format!("sup norm {sup:e} exceeded the blow-up threshold");
                break;
            }
            growing = if growth > o.growth_factor { growing + 1 } else { 0 };
            if growing >= o.growth_window {
                rep.status = Status::Diverged;
                rep.detail = format!("pointwise growth above {} for {} steps", o.growth_factor, o.growth_window);
                break;
            }
            if rel < o.tol {
                rep.status = Status::Converged;
                break;
            }
        }
        if rep.status == Status::Converged {
            self.verify(&v, sigma, &mut rep)?;
        }
        rep.wall_time = clock.elapsed().as_secs_f64();
        Ok((v, rep))
    }

    /// `u = φ v`.
    pub fn to_u(&self, v: &[f64]) -> Result<Field> {
        Field::new(self.cloud.clone(), v.iter().zip(&self.phi).map(|(a, b)| a * b).collect())
    }

    fn probe_indices(&self) -> Vec<usize> {
        let n = self.cloud.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed ^ 0x5EED_0F9B_0BE5);
        let mut idx = sample(&mut rng, n, self.opts.probes.min(n)).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Residual of the fixed-point identity in full precision at the probes,
    /// and the comparability ratio with the Green and Martin estimates.
    fn verify(&self, v: &[f64], sigma: f64, rep: &mut IterationReport) -> Result<()> {
        let idx = self.probe_indices();
        if idx.is_empty() {
            return Ok(());
        }
        let c = &self.cloud;
        let f: Vec<f64> = v.iter().zip(&self.weight).map(|(x, w)| w * x.powf(self.p)).collect();
        let direct = self.handle.apply_rows(&idx, &f)?;
        let mut worst: f64 = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            let rhs = direct[k] + sigma * self.source[i];
            if v[i] > 0.0 {
                worst = worst.max((v[i] - rhs).abs() / v[i]);
            }
        }
        rep.probe_residual = Some(worst);
        if worst > self.opts.probe_tol {
            rep.detail = format!("probe residual {worst:.3e} above {}", self.opts.probe_tol);
        }
        let green = OperatorHandle::new(
            Kernel::new(KernelSpec::green(self.domain, self.params))?,
            c.clone(),
            DiagPolicy::CellCorrection,
        )?
        .without_cache();
        let martin = Kernel::new(KernelSpec::martin(self.domain, self.params))?;
        let u = self.to_u(v)?;
        let up: Vec<f64> = u.values.iter().map(|x| x.powf(self.p)).collect();
        let g = green.apply_rows(&idx, &up)?;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (k, &i) in idx.iter().enumerate() {
            let gx = c.geom(i);
            let kn: f64 = self
                .nu
                .nodes()
                .map(|a| {
                    let r = dist(c.point(i), &a.point);
                    a.mass * martin.eval_geom(r, gx, SiteGeom { d: 0.0, ds: self.domain.d_sigma(&a.point) })
                })
                .sum();
            if u.values[i] > 0.0 {
                let q = (g[k] + sigma * kn) / u.values[i];
                lo = lo.min(q);
                hi = hi.max(q);
            }
        }
        if hi > 0.0 {
            rep.comparability = Some([lo, hi]);
        }
        Ok(())
    }
}

/// Solve `u = 𝔾[u^p] + σ𝕂[ν]` on `cloud`.
pub fn solve_source(
    domain: &DomainModel,
    params: &SpectralParams,
    p: f64,
    nu: &BoundaryMeasure,
    sigma: f64,
    cloud: Arc<SampleCloud>,
    opts: SolverOptions,
) -> Result<(Field, IterationReport)> {
    let prob = SourceProblem::new(domain, params, p, nu, cloud, opts)?;
    let (v, rep) = prob.solve_v(sigma, None)?;
    Ok((prob.to_u(&v)?, rep))
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdRun {
    pub sigma: f64,
    pub status: Status,
    pub iterations: usize,
}

/// Outcome of the `σ` bisection. The value is a threshold of the discretized
/// problem with unit-constant kernels ("surrogate threshold").
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdReport {
    #[serde(with = "ext_f64")]
    pub sigma: f64,
    #[serde(with = "ext_f64")]
    pub lower: f64,
    #[serde(with = "ext_f64")]
    pub upper: f64,
    pub verdict: String,
    pub runs: Vec<ThresholdRun>,
    pub anomalies: Vec<String>,
}

/// Bisection in `ln σ` over `[SIGMA_MIN, SIGMA_MAX]`. Runs that stop at
/// `max_iter` count as not converged. Converged solutions warm-start larger `σ`.
pub fn sigma_threshold(prob: &SourceProblem) -> Result<ThresholdReport> {
    let mut rep = ThresholdReport {
        sigma: f64::INFINITY,
        lower: SIGMA_MIN,
        upper: f64::INFINITY,
        verdict: String::new(),
        runs: Vec::new(),
        anomalies: Vec::new(),
    };
    if prob.nu.is_zero() {
        rep.verdict = "zero measure: every σ converges".into();
        return Ok(rep);
    }
    let record = |rep: &mut ThresholdReport, s: f64, r: &IterationReport| {
        rep.runs.push(ThresholdRun { sigma: s, status: r.status, iterations: r.iterations });
    };
    let (v_lo, r_lo) = prob.solve_v(SIGMA_MIN, None)?;
    record(&mut rep, SIGMA_MIN, &r_lo);
    if !r_lo.converged() {
        rep.sigma = 0.0;
        rep.lower = 0.0;
        rep.upper = SIGMA_MIN;
        rep.verdict = "no small-σ existence detected".into();
        return Ok(rep);
    }
    let (_, r_hi) = prob.solve_v(SIGMA_MAX, Some(&v_lo))?;
    record(&mut rep, SIGMA_MAX, &r_hi);
    if r_hi.converged() {
        rep.sigma = SIGMA_MAX;
        rep.lower = SIGMA_MAX;
        rep.verdict = "converged over the whole range".into();
        return Ok(rep);
    }
    let (mut lo, mut hi, mut warm) = (SIGMA_MIN, SIGMA_MAX, v_lo);
    while hi / lo > 1.0 + prob.opts.bracket_tol {
        let mid = (lo * hi).sqrt();
        let (v, r) = prob.solve_v(mid, Some(&warm))?;
        record(&mut rep, mid, &r);
        if r.converged() {
            lo = mid;
            warm = v;
        } else {
            hi = mid;
        }
    }
    let lowest_failure =
        rep.runs.iter().filter(|r| r.status != Status::Converged).map(|r| r.sigma).fold(f64::INFINITY, f64::min);
    for r in rep.runs.iter().filter(|r| r.status == Status::Converged && r.sigma > lowest_failure) {
        rep.anomalies.push(format!("converged at σ = {:e} above a failure at {lowest_failure:e}", r.sigma));
    }
    rep.lower = lo;
    rep.upper = hi;
    rep.sigma = (lo * hi).sqrt();
    rep.verdict = if hi - lo < 1e-6 { "critical".into() } else { "surrogate threshold".into() };
    Ok(rep)
}

/// Solve `u + 𝔾[u^p] = 𝕂[ν]` by the alternating scheme
/// `u_{n+1} = max(𝕂[ν] - 𝔾[u_n^p], 0)` from `u_0 = 𝕂[ν]`. Even iterates
/// decrease, odd iterates increase, and the pair brackets the solution.
pub fn solve_absorption(
    domain: &DomainModel,
    params: &SpectralParams,
    p: f64,
    nu: &BoundaryMeasure,
    cloud: Arc<SampleCloud>,
    opts: SolverOptions,
) -> Result<(Field, IterationReport)> {
    opts.validate()?;
    if !(p > 1.0) {
        return invalid(format!("absorption exponent must exceed 1, got {p}"));
    }
    if cloud.domain != *domain {
        return invalid("cloud lives on a different domain");
    }
    let clock = Instant::now();
    let mut rep = IterationReport::new(nu.total_mass(), 1.0);
    let n = cloud.len();
    if nu.is_zero() {
        rep.status = Status::Converged;
        rep.iterations = 1;
        rep.residual_sup = 0.0;
        rep.residual_l1_phi = 0.0;
        rep.norm_history.push(0.0);
        return Ok((Field::zeros(cloud), rep));
    }
    let martin = Kernel::new(KernelSpec::martin(*domain, *params))?;
    let k = measure_potential(&martin, &cloud, nu)?.values;
    let green = OperatorHandle::new(
        Kernel::new(KernelSpec::green(*domain, *params))?,
        cloud.clone(),
        DiagPolicy::CellCorrection,
    )?;
    let phi: Vec<f64> = (0..n).map(|i| cloud.geom(i).d * cloud.geom(i).ds.powf(-params.alpha_minus)).collect();
    let l1 = |v: &[f64]| -> f64 {
        let t: Vec<f64> = v.iter().enumerate().map(|(i, x)| cloud.weights()[i] * phi[i] * x.abs()).collect();
        pairwise_sum(&t)
    };
    let map = |u: &[f64]| -> Result<Vec<f64>> {
        let up: Vec<f64> = u.iter().map(|x| x.powf(p)).collect();
        let g = green.apply(&up)?;
        Ok(k.iter().zip(&g).map(|(a, b)| (a - b).max(0.0)).collect())
    };
    let width_of = |hi: &[f64], lo: &[f64]| -> f64 {
        (0..n).filter(|&i| k[i] > 0.0).map(|i| (hi[i] - lo[i]).abs() / k[i]).fold(0.0, f64::max)
    };
    // upper: even iterates, lower: odd iterates
    let mut upper = k.clone();
    let mut lower = map(&upper)?;
    let mut widths = vec![width_of(&upper, &lower)];
    rep.iterations = 1;
    let mut stalled = false;
    for it in 2..=opts.max_iter {
        let next_upper = map(&lower)?;
        let next_lower = map(&next_upper)?;
        rep.iterations = it;
        for i in 0..n {
            if next_upper[i] > upper[i] || next_lower[i] < lower[i] || next_lower[i] > next_upper[i] {
                return Err(Error::Invariant(format!("bracket order failed at point {i} in step {it}")));
            }
        }
        upper = next_upper;
        lower = next_lower;
        let width = width_of(&upper, &lower);
        widths.push(width);
        let diff: Vec<f64> = upper.iter().zip(&lower).map(|(a, b)| a - b).collect();
        rep.residual_sup = width;
        rep.residual_l1_phi = l1(&diff) / l1(&upper).max(f64::MIN_POSITIVE);
        rep.norm_history.push(upper.iter().cloned().fold(0.0, f64::max));
        if width < opts.tol {
            rep.status = Status::Converged;
            break;
        }
        if widths.len() > STALL_WINDOW && width > STALL_RATIO * widths[widths.len() - 1 - STALL_WINDOW] {
            stalled = true;
            break;
        }
    }
    rep.bracket = Some(rep.residual_sup);
    let mut u: Vec<f64> = upper.iter().zip(&lower).map(|(a, b)| 0.5 * (a + b)).collect();
    if stalled {
        // the alternating map is expansive here; fall back to a relaxed
        // iteration inside the bracket
        let bracket = rep.residual_sup;
        // Lipschitz scale of the map from the Perron root of u ↦ p𝔾[m^{p-1}u]
        let slope: Vec<f64> = u.iter().map(|x| p * x.powf(p - 1.0)).collect();
        let mut e = vec![1.0; n];
        let mut lip = 1.0;
        for _ in 0..PERRON_STEPS {
            let f: Vec<f64> = e.iter().zip(&slope).map(|(a, b)| a * b).collect();
            let ge = green.apply(&f)?;
            let top = ge.iter().cloned().fold(0.0, f64::max);
            if top <= 0.0 {
                break;
            }
            lip = top / e.iter().cloned().fold(0.0, f64::max);
            e = ge.into_iter().map(|v| v / top).collect();
        }
        let lambda = 1.0 / lip.max(1.0);
        let mut t = map(&u)?;
        let mut res = width_of(&t, &u);
        let mut relaxed = 0;
        while relaxed < opts.max_iter && res >= opts.tol {
            relaxed += 1;
            u = u.iter().zip(&t).map(|(a, b)| (a + lambda * b) / (1.0 + lambda)).collect();
            t = map(&u)?;
            res = width_of(&t, &u);
            rep.norm_history.push(u.iter().cloned().fold(0.0, f64::max));
        }
        rep.iterations += relaxed;
        rep.residual_sup = res;
        let diff: Vec<f64> = t.iter().zip(&u).map(|(a, b)| a - b).collect();
        rep.residual_l1_phi = l1(&diff) / l1(&u).max(f64::MIN_POSITIVE);
        rep.damping = lambda / (1.0 + lambda);
        rep.detail = format!(
            "alternating bracket stalled at width {bracket:.3e}; relaxed iteration, final step weight {:.3e}",
            rep.damping
        );
        if res < opts.tol {
            rep.status = Status::Converged;
        }
    } else if rep.status != Status::Converged {
        rep.detail = format!("bracket width {:e} after {} steps", rep.residual_sup, rep.iterations);
    }
    rep.wall_time = clock.elapsed().as_secs_f64();
    Ok((Field::new(cloud, u)?, rep))
}
