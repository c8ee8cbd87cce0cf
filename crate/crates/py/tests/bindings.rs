use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(hbvp_py::hbvp_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("h", m).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        py.run(&code, Some(&globals), None).unwrap_or_else(|e| panic!("{e}"));
    });
}

#[test]
fn exponents_and_kernels() {
    run(r#"
assert h.alpha_pm(2.0, 3, 0) == (1.0, 2.0)
d = h.Domain(4, 1)
t = d.exponent_table(2.25)
assert t["alpha_minus"] == 1.5 and abs(t["exponents"]["p_plus"] - 5.0) < 1e-12
g = h.Kernel(h.Domain(3, 0), 2.0)
assert g([0.3, 0.1, 0.0], [-0.2, 0.4, 0.1]) > 0
"#);
}

#[test]
fn errors_map_to_exception_classes() {
    run(r#"
for bad in (lambda: h.Domain(2, 0), lambda: h.Kernel(h.Domain(3, 0), 2.0, variant="nope"), lambda: h.scan("scenario.bogus = 1")):
    try:
        bad()
    except h.ConfigError as e:
        assert isinstance(e, h.HbvpError)
    else:
        raise AssertionError("accepted")
"#);
}

#[test]
fn solves_on_a_cloud() {
    run(r#"
d = h.Domain(3, 0)
c = h.Cloud(d, resolution=1200, seed=4)
r = h.solve_source(d, c, 2.0, 2.0, 1e-3, "dirac:1,0,0")
assert r["report"]["status"] == "converged" and len(r["values"]) == len(c)
r = h.solve_source(d, c, 2.0, 4.0, 1e-6, "dirac:1,0,0")
assert r["report"]["status"] == "diverged"
"#);
}
