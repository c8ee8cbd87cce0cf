//! Python bindings for `hbvp`.
//!
//! Reports come back as plain dicts decoded from the library's JSON, so
//! field names match the CLI output.

use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use hbvp::capacity::{self, CapacityOptions, CapacityProblem, TargetSet};
use hbvp::cloud::{make_cloud, Grading, SampleCloud};
use hbvp::config::RunConfig;
use hbvp::measure::BoundaryMeasure;
use hbvp::rayleigh::{rayleigh_lambda_estimate, LatticeSpec};
use hbvp::scenarios::{exponent_table, phase_scan, PhaseScanConfig};
use hbvp::solvers::{sigma_threshold, solve_absorption, SolverOptions, SourceProblem};
use hbvp::{DomainModel, KernelSpec, KernelVariant, SpectralParams};

create_exception!(hbvp_py, HbvpError, PyException);
create_exception!(hbvp_py, ConfigError, HbvpError);
create_exception!(hbvp_py, DivergenceError, HbvpError);
create_exception!(hbvp_py, NoConvergenceError, HbvpError);

fn err(e: hbvp::Error) -> PyErr {
    let msg = e.to_string();
    match e {
        hbvp::Error::Config(_) | hbvp::Error::Domain(_) => ConfigError::new_err(msg),
        hbvp::Error::Divergence(_) => DivergenceError::new_err(msg),
        hbvp::Error::NoConvergence { .. } => NoConvergenceError::new_err(msg),
        _ => HbvpError::new_err(msg),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| HbvpError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Unit ball in `R^N` with a great `k`-sphere `Σ` on its boundary.
#[pyclass(name = "Domain", frozen)]
struct PyDomain {
    inner: DomainModel,
}

#[pymethods]
impl PyDomain {
    #[new]
    #[pyo3(signature = (n, k, beta0 = None))]
    fn new(n: usize, k: usize, beta0: Option<f64>) -> PyResult<Self> {
        let inner = match beta0 {
            Some(b) => DomainModel::new(n, k, b),
            None => DomainModel::with_default_beta(n, k),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.sigma_dim
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.hardy_h()
    }

    fn d_sigma(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check(&x)?;
        Ok(self.inner.d_sigma(&x))
    }

    fn d_boundary(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check(&x)?;
        Ok(self.inner.d_boundary(&x))
    }

    /// Characteristic exponents, critical exponents and `ϑ(p)` samples.
    fn exponent_table(&self, py: Python<'_>, mu: f64) -> PyResult<Py<PyAny>> {
        to_py(py, &exponent_table(&self.inner, mu).map_err(err)?)
    }

    /// Lattice estimate of the first eigenvalue of `-Δ - μ/d_Σ²`.
    #[pyo3(signature = (mu, n = 40))]
    fn lambda_estimate(&self, py: Python<'_>, mu: f64, n: usize) -> PyResult<Py<PyAny>> {
        let spec = LatticeSpec { n, ..LatticeSpec::default() };
        let est = py.detach(|| rayleigh_lambda_estimate(&self.inner, mu, spec)).map_err(err)?;
        to_py(py, &est)
    }

    fn __repr__(&self) -> String {
        format!("Domain(n={}, k={}, beta0={})", self.inner.dim, self.inner.sigma_dim, self.inner.beta0)
    }
}

impl PyDomain {
    fn check(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.dim {
            return Err(ConfigError::new_err(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.inner.dim
            )));
        }
        Ok(())
    }

    fn params(&self, mu: f64) -> PyResult<SpectralParams> {
        SpectralParams::new(&self.inner, mu).map_err(err)
    }
}

/// A kernel of the operator with fixed `μ`.
#[pyclass(name = "Kernel", frozen)]
struct PyKernel {
    inner: hbvp::Kernel,
}

#[pymethods]
impl PyKernel {
    #[new]
    #[pyo3(signature = (domain, mu, variant = "green", alpha = None, eps = None))]
    fn new(domain: &PyDomain, mu: f64, variant: &str, alpha: Option<f64>, eps: Option<f64>) -> PyResult<Self> {
        let params = domain.params(mu)?;
        let variant = KernelVariant::parse(variant).map_err(err)?;
        let spec = KernelSpec { variant, alpha, eps, params, domain: domain.inner };
        Ok(Self { inner: hbvp::Kernel::new(spec).map_err(err)? })
    }

    fn __call__(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&x, &y).map_err(err)
    }
}

/// Weighted quadrature cloud of the ball, graded towards `∂Ω` and `Σ`.
#[pyclass(name = "Cloud", frozen)]
struct PyCloud {
    inner: Arc<SampleCloud>,
}

#[pymethods]
impl PyCloud {
    #[new]
    #[pyo3(signature = (domain, resolution = 4000, seed = 0))]
    fn new(py: Python<'_>, domain: &PyDomain, resolution: usize, seed: u64) -> PyResult<Self> {
        let d = domain.inner;
        let cloud = py.detach(|| make_cloud(&d, resolution, Grading::default(), seed)).map_err(err)?;
        Ok(Self { inner: Arc::new(cloud) })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn points(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|i| self.inner.point(i).to_vec()).collect()
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn integrate(&self, values: Vec<f64>) -> PyResult<f64> {
        if values.len() != self.inner.len() {
            return Err(ConfigError::new_err("one value per cloud point expected"));
        }
        Ok(self.inner.integrate(&values))
    }
}

fn report(py: Python<'_>, values: Vec<f64>, rep: &impl Serialize) -> PyResult<Py<PyAny>> {
    let d = PyDict::new(py);
    d.set_item("values", values)?;
    d.set_item("report", to_py(py, rep)?)?;
    Ok(d.into_any().unbind())
}

/// Solve `u = 𝔾[u^p] + σ𝕂[ν]`. `measure` uses the CLI syntax, e.g.
/// `"dirac:1,0,0"` or `"sigma:1"`.
#[pyfunction]
#[pyo3(signature = (domain, cloud, mu, p, sigma, measure))]
fn solve_source(
    py: Python<'_>,
    domain: &PyDomain,
    cloud: &PyCloud,
    mu: f64,
    p: f64,
    sigma: f64,
    measure: &str,
) -> PyResult<Py<PyAny>> {
    let params = domain.params(mu)?;
    let nu = BoundaryMeasure::parse(measure, &domain.inner).map_err(err)?;
    let c = cloud.inner.clone();
    let (u, rep) = py
        .detach(|| {
            let prob = SourceProblem::new(&domain.inner, &params, p, &nu, c, SolverOptions::default())?;
            let (v, rep) = prob.solve_v(sigma, None)?;
            Ok::<_, hbvp::Error>((prob.to_u(&v)?, rep))
        })
        .map_err(err)?;
    report(py, u.values, &rep)
}

/// Bracket the largest `σ` for which the source problem converges.
#[pyfunction]
fn source_threshold(
    py: Python<'_>,
    domain: &PyDomain,
    cloud: &PyCloud,
    mu: f64,
    p: f64,
    measure: &str,
) -> PyResult<Py<PyAny>> {
    let params = domain.params(mu)?;
    let nu = BoundaryMeasure::parse(measure, &domain.inner).map_err(err)?;
    let c = cloud.inner.clone();
    let rep = py
        .detach(|| sigma_threshold(&SourceProblem::new(&domain.inner, &params, p, &nu, c, SolverOptions::default())?))
        .map_err(err)?;
    to_py(py, &rep)
}

/// Solve `u + 𝔾[u^p] = 𝕂[ν]`.
#[pyfunction]
fn solve_absorption_problem(
    py: Python<'_>,
    domain: &PyDomain,
    cloud: &PyCloud,
    mu: f64,
    p: f64,
    measure: &str,
) -> PyResult<Py<PyAny>> {
    let params = domain.params(mu)?;
    let nu = BoundaryMeasure::parse(measure, &domain.inner).map_err(err)?;
    let c = cloud.inner.clone();
    let (u, rep) =
        py.detach(|| solve_absorption(&domain.inner, &params, p, &nu, c, SolverOptions::default())).map_err(err)?;
    report(py, u.values, &rep)
}

/// Two-sided estimate of `Cap_{𝔑_α,s}^{b,θ}(E)`. `set` uses the CLI
/// syntax, e.g. `"cap:0,1,0:0.2;point:1,0,0"`.
#[pyfunction]
#[pyo3(signature = (domain, cloud, set, alpha, b, theta, s, samples = 96))]
#[allow(clippy::too_many_arguments)]
fn capacity_estimate(
    py: Python<'_>,
    domain: &PyDomain,
    cloud: &PyCloud,
    set: &str,
    alpha: f64,
    b: f64,
    theta: f64,
    s: f64,
    samples: usize,
) -> PyResult<Py<PyAny>> {
    let set = TargetSet::parse(set).map_err(err)?;
    let opts = CapacityOptions { samples, ..CapacityOptions::default() };
    let c = cloud.inner.clone();
    let est = py
        .detach(|| capacity::estimate(&CapacityProblem::new(&domain.inner, set, alpha, b, theta, s, c, opts)?))
        .map_err(err)?;
    to_py(py, &est)
}

/// Phase scan driven by `key = value` configuration text.
#[pyfunction]
fn scan(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let run = RunConfig::parse(config).map_err(err)?;
    let cfg = PhaseScanConfig::from_run(&run).map_err(err)?;
    let diagram = py.detach(|| phase_scan(&cfg)).map_err(err)?;
    to_py(py, &diagram)
}

/// `(α₋, α₊)` for `μ ≤ H²`.
#[pyfunction]
fn alpha_pm(mu: f64, n: usize, k: usize) -> PyResult<(f64, f64)> {
    hbvp::alpha_pm(mu, n, k).map_err(err)
}

#[pymodule]
pub fn hbvp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("HbvpError", py.get_type::<HbvpError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DivergenceError", py.get_type::<DivergenceError>())?;
    m.add("NoConvergenceError", py.get_type::<NoConvergenceError>())?;
    m.add_class::<PyDomain>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyCloud>()?;
    m.add_function(wrap_pyfunction!(alpha_pm, m)?)?;
    m.add_function(wrap_pyfunction!(solve_source, m)?)?;
    m.add_function(wrap_pyfunction!(source_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(solve_absorption_problem, m)?)?;
    m.add_function(wrap_pyfunction!(capacity_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(scan, m)?)?;
    Ok(())
}
