//! Exponent tables and phase scans over `(p, σ)` or `(p, μ)`.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::capacity::vartheta;
use crate::cloud::{make_cloud, SampleCloud};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{CriticalExponents, DomainModel, SpectralParams};
use crate::measure::BoundaryMeasure;
use crate::report::{ext_f64, json_f64};
use crate::scan::{integrability_scan, ScanSpec, Verdict};
use crate::solvers::{SolverOptions, SourceProblem, Status};

/// Largest number of points per scan axis.
pub const MAX_AXIS: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct ExponentTable {
    pub n: usize,
    pub k: usize,
    pub mu: f64,
    pub h: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub exponents: CriticalExponents,
    /// `ϑ(p)` on `(1, p_plus]`, or `(1, 5]` when `p_plus = ∞`.
    pub vartheta: Vec<VarthetaSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarthetaSample {
    pub p: f64,
    pub vartheta: f64,
}

pub fn exponent_table(domain: &DomainModel, mu: f64) -> Result<ExponentTable> {
    let params = SpectralParams::new(domain, mu)?;
    let ap = params.alpha_plus;
    let top = if params.exponents.p_plus.is_finite() { params.exponents.p_plus } else { 5.0 };
    let vartheta = (1..=8)
        .map(|j| {
            let p = 1.0 + (top - 1.0) * j as f64 / 8.0;
            VarthetaSample { p, vartheta: vartheta(p, ap) }
        })
        .collect();
    Ok(ExponentTable {
        n: domain.dim,
        k: domain.sigma_dim,
        mu,
        h: params.h,
        alpha_minus: params.alpha_minus,
        alpha_plus: ap,
        exponents: params.exponents,
        vartheta,
    })
}

/// Where the Dirac datum sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Sigma,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Integrability of the first nonlinear term near the atom.
    Fast,
    /// Full fixed-point solve per cell.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "name", content = "values", rename_all = "snake_case")]
pub enum Axis {
    Sigma(Vec<f64>),
    Mu(Vec<f64>),
}

impl Axis {
    fn values(&self) -> &[f64] {
        match self {
            Axis::Sigma(v) | Axis::Mu(v) => v,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Axis::Sigma(_) => "sigma",
            Axis::Mu(_) => "mu",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseScanConfig {
    pub domain: DomainModel,
    /// `μ` on a `σ` axis.
    pub mu: f64,
    /// `σ` on a `μ` axis.
    pub sigma: f64,
    pub p_grid: Vec<f64>,
    pub axis: Axis,
    pub location: Location,
    pub mode: ScanMode,
    pub resolution: usize,
    pub grading: crate::cloud::Grading,
    pub seed: u64,
    pub opts: SolverOptions,
}

impl PhaseScanConfig {
    /// Read `scenario.{p_grid, sigma_grid | mu_grid, axis, location, mode, sigma}`.
    pub fn from_run(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let domain = cfg.domain_model()?;
        let p_grid = cfg.grid("p_grid")?.unwrap_or_else(|| crate::config::parse_grid("p_grid", "1.2:4.8:19").unwrap());
        let axis = match cfg.str_or("axis", "sigma") {
            "sigma" => Axis::Sigma(cfg.grid("sigma_grid")?.unwrap_or_else(|| vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0])),
            "mu" => {
                let h = domain.hardy_h();
                Axis::Mu(cfg.grid("mu_grid")?.unwrap_or_else(|| (0..5).map(|i| h * h * i as f64 / 4.0).collect()))
            }
            other => return Err(Error::Config(format!("scenario.axis must be sigma or mu, got {other}"))),
        };
        let location = match cfg.str_or("location", "sigma") {
            "sigma" => Location::Sigma,
            "boundary" => Location::Boundary,
            other => return Err(Error::Config(format!("scenario.location must be sigma or boundary, got {other}"))),
        };
        let mode = match cfg.str_or("mode", "fast") {
            "fast" => ScanMode::Fast,
            "full" => ScanMode::Full,
            other => return Err(Error::Config(format!("scenario.mode must be fast or full, got {other}"))),
        };
        let opts = SolverOptions { seed: cfg.cloud.seed, ..SolverOptions::default() };
        let c = Self {
            domain,
            mu: cfg.domain.mu,
            sigma: cfg.f64_or("sigma", 1e-3)?,
            p_grid,
            axis,
            location,
            mode,
            resolution: cfg.cloud.resolution,
            grading: cfg.cloud.grading,
            seed: cfg.cloud.seed,
            opts,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (np, na) = (self.p_grid.len(), self.axis.values().len());
        if np == 0 || na == 0 || np > MAX_AXIS || na > MAX_AXIS {
            return Err(Error::Config(format!("scan grids must have 1..={MAX_AXIS} points, got {np} × {na}")));
        }
        if self.p_grid.iter().any(|p| !(*p > 1.0)) {
            return Err(Error::Config("scan exponents must exceed 1".into()));
        }
        if self.location == Location::Boundary && self.domain.off_sigma_anchor().is_none() {
            return Err(Error::Config("no boundary point off Σ".into()));
        }
        match &self.axis {
            Axis::Sigma(s) if s.iter().any(|v| !(*v > 0.0)) => Err(Error::Config("σ values must be positive".into())),
            Axis::Mu(m) => m.iter().try_for_each(|mu| {
                SpectralParams::new(&self.domain, *mu).map(|_| ()).map_err(|e| Error::Config(e.to_string()))
            }),
            _ => SpectralParams::new(&self.domain, self.mu).map(|_| ()).map_err(|e| Error::Config(e.to_string())),
        }
    }

    fn center(&self) -> Vec<f64> {
        match self.location {
            Location::Sigma => self.domain.sigma_anchor(),
            Location::Boundary => self.domain.off_sigma_anchor().expect("validated"),
        }
    }

    fn critical_p(&self, ex: &CriticalExponents) -> f64 {
        match self.location {
            Location::Sigma => ex.p_sigma,
            Location::Boundary => ex.p_boundary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellVerdict {
    Converged,
    Diverged,
    Critical,
    Failed,
}

impl CellVerdict {
    pub fn label(self) -> &'static str {
        match self {
            CellVerdict::Converged => "converged",
            CellVerdict::Diverged => "diverged",
            CellVerdict::Critical => "critical",
            CellVerdict::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub index: usize,
    pub p: f64,
    /// Value on the second axis.
    pub value: f64,
    pub verdict: CellVerdict,
    /// Fitted density exponent (fast mode) or iteration count (full mode).
    #[serde(with = "ext_f64")]
    pub measure: f64,
    /// `None` inside the critical band.
    pub agrees: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub value: f64,
    pub exponents: CriticalExponents,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseDiagram {
    pub p_grid: Vec<f64>,
    pub axis: Axis,
    pub location: Location,
    pub mode: ScanMode,
    /// Row-major in `p`: `index = i_p · len(axis) + i_axis`.
    pub cells: Vec<Cell>,
    pub curves: Vec<CurvePoint>,
    /// Fraction of cells outside the critical band that land on the
    /// predicted side of the critical exponent.
    #[serde(with = "ext_f64")]
    pub agreement: f64,
    pub scored: usize,
    pub failures: usize,
}

impl PhaseDiagram {
    pub fn csv(&self) -> String {
        let mut s = format!("index,p,{},verdict,measure,agrees\n", self.axis.name());
        for c in &self.cells {
            let agrees = c.agrees.map_or("", |a| if a { "1" } else { "0" });
            let _ = writeln!(
                s,
                "{},{},{:e},{},{},{}",
                c.index,
                c.p,
                c.value,
                c.verdict.label(),
                json_f64(c.measure),
                agrees
            );
        }
        s
    }
}

type CellResult = (usize, CellVerdict, f64, Option<String>);

fn row_verdicts_fast(
    cfg: &PhaseScanConfig,
    p: f64,
    params: &SpectralParams,
    z: &[f64],
) -> (CellVerdict, f64, Option<String>) {
    match integrability_scan(&cfg.domain, params, z, &ScanSpec::new(p)) {
        Ok(r) => {
            let v = match r.verdict {
                Verdict::Convergent => CellVerdict::Converged,
                Verdict::Divergent => CellVerdict::Diverged,
                Verdict::Critical => CellVerdict::Critical,
            };
            (v, r.exponent, None)
        }
        Err(e) => (CellVerdict::Failed, f64::NAN, Some(e.to_string())),
    }
}

fn solve_cell(prob: &Result<SourceProblem>, sigma: f64) -> (CellVerdict, f64, Option<String>) {
    let prob = match prob {
        Ok(p) => p,
        Err(e) => return (CellVerdict::Failed, f64::NAN, Some(e.to_string())),
    };
    match prob.solve_v(sigma, None) {
        Ok((_, r)) => {
            let v = match r.status {
                Status::Converged => CellVerdict::Converged,
                Status::Diverged => CellVerdict::Diverged,
                Status::MaxIter => CellVerdict::Critical,
            };
            (v, r.iterations as f64, None)
        }
        Err(e) => (CellVerdict::Failed, f64::NAN, Some(e.to_string())),
    }
}

/// Run every cell, overlay the critical curves and score the agreement.
/// Per-cell failures are recorded and do not stop the scan.
pub fn phase_scan(cfg: &PhaseScanConfig) -> Result<PhaseDiagram> {
    cfg.validate()?;
    let z = cfg.center();
    let values = cfg.axis.values().to_vec();
    let na = values.len();
    let params_for = |j: usize| -> Result<SpectralParams> {
        match cfg.axis {
            Axis::Mu(_) => SpectralParams::new(&cfg.domain, values[j]),
            Axis::Sigma(_) => SpectralParams::new(&cfg.domain, cfg.mu),
        }
    };
    let column_params: Vec<SpectralParams> = (0..na).map(params_for).collect::<Result<_>>()?;
    let cloud: Option<Arc<SampleCloud>> = match cfg.mode {
        ScanMode::Full => Some(Arc::new(make_cloud(&cfg.domain, cfg.resolution, cfg.grading, cfg.seed)?)),
        ScanMode::Fast => None,
    };
    let nu = BoundaryMeasure::dirac(z.clone(), 1.0)?;

    // one job per p on a σ axis (σ does not change the problem), one per cell on a μ axis
    let jobs: Vec<(usize, Option<usize>)> = match cfg.axis {
        Axis::Sigma(_) => (0..cfg.p_grid.len()).map(|i| (i, None)).collect(),
        Axis::Mu(_) => (0..cfg.p_grid.len()).flat_map(|i| (0..na).map(move |j| (i, Some(j)))).collect(),
    };
    let results: Vec<Vec<CellResult>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let p = cfg.p_grid[i];
            let cols: Vec<usize> = j.map_or_else(|| (0..na).collect(), |j| vec![j]);
            let params = &column_params[cols[0]];
            match cfg.mode {
                ScanMode::Fast => {
                    let (v, m, e) = row_verdicts_fast(cfg, p, params, &z);
                    cols.iter().map(|&c| (i * na + c, v, m, e.clone())).collect()
                }
                ScanMode::Full => {
                    let prob =
                        SourceProblem::new(&cfg.domain, params, p, &nu, cloud.clone().expect("full mode"), cfg.opts);
                    cols.iter()
                        .map(|&c| {
                            let sigma = match cfg.axis {
                                Axis::Sigma(_) => values[c],
                                Axis::Mu(_) => cfg.sigma,
                            };
                            let (v, m, e) = solve_cell(&prob, sigma);
                            (i * na + c, v, m, e)
                        })
                        .collect()
                }
            }
        })
        .collect();
    let mut flat: Vec<_> = results.into_iter().flatten().collect();
    flat.sort_by_key(|r| r.0);

    let mut cells: Vec<Cell> = flat
        .into_iter()
        .map(|(index, verdict, measure, error)| Cell {
            index,
            p: cfg.p_grid[index / na],
            value: values[index % na],
            verdict,
            measure,
            agrees: None,
            error,
        })
        .collect();
    let band = band_width(&cfg.p_grid);
    for idx in 0..cells.len() {
        let (i, j) = (idx / na, idx % na);
        let pc = cfg.critical_p(&column_params[j].exponents);
        let p = cfg.p_grid[i];
        if (p - pc).abs() <= band || cells[idx].verdict == CellVerdict::Failed {
            continue;
        }
        let ok = if p >= pc {
            cells[idx].verdict == CellVerdict::Diverged
        } else {
            match (cfg.mode, &cfg.axis) {
                (ScanMode::Full, Axis::Sigma(_)) => subcritical_row_agrees(&cells[i * na..(i + 1) * na], j),
                _ => cells[idx].verdict == CellVerdict::Converged,
            }
        };
        cells[idx].agrees = Some(ok);
    }
    let scored = cells.iter().filter(|c| c.agrees.is_some()).count();
    let hits = cells.iter().filter(|c| c.agrees == Some(true)).count();
    let curves =
        values.iter().zip(&column_params).map(|(v, p)| CurvePoint { value: *v, exponents: p.exponents }).collect();
    Ok(PhaseDiagram {
        p_grid: cfg.p_grid.clone(),
        axis: cfg.axis.clone(),
        location: cfg.location,
        mode: cfg.mode,
        failures: cells.iter().filter(|c| c.verdict == CellVerdict::Failed).count(),
        cells,
        curves,
        agreement: if scored == 0 { f64::NAN } else { hits as f64 / scored as f64 },
        scored,
    })
}

/// Largest gap of the `p` grid: the half-width of the critical band.
fn band_width(grid: &[f64]) -> f64 {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// Below the critical exponent a full solve converges for small `σ` and
/// diverges above a threshold: a cell agrees if it converges, or if it
/// diverges above a converged cell with every larger `σ` diverging too.
fn subcritical_row_agrees(row: &[Cell], j: usize) -> bool {
    match row[j].verdict {
        CellVerdict::Converged => true,
        CellVerdict::Diverged => {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|a, b| row[*a].value.total_cmp(&row[*b].value));
            let below_converged =
                order.iter().any(|&c| row[c].value < row[j].value && row[c].verdict == CellVerdict::Converged);
            let above_diverged = order
                .iter()
                .filter(|&&c| row[c].value > row[j].value)
                .all(|&c| row[c].verdict != CellVerdict::Converged);
            below_converged && above_diverged
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_is_largest_gap() {
        assert_eq!(band_width(&[1.0, 1.5, 3.0]), 1.5);
        assert_eq!(band_width(&[2.0]), 0.0);
    }

    fn cell(value: f64, verdict: CellVerdict) -> Cell {
        Cell { index: 0, p: 2.0, value, verdict, measure: 0.0, agrees: None, error: None }
    }

    #[test]
    fn subcritical_rows() {
        use CellVerdict::*;
        let row = vec![cell(1e-3, Converged), cell(1e-2, Diverged), cell(1e-1, Diverged)];
        assert!((0..3).all(|j| subcritical_row_agrees(&row, j)));
        let row = vec![cell(1e-3, Diverged), cell(1e-2, Converged)];
        assert!(!subcritical_row_agrees(&row, 0));
    }
}
