"""Smoke test for the hbvp_py extension.

Uses an installed ``hbvp_py`` when available, otherwise the library built by
``cargo build -p hbvp-py --release``.
"""

import importlib
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        return importlib.import_module("hbvp_py")
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libhbvp_py.so"
        if lib.exists():
            tmp = pathlib.Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "hbvp_py.so")
            sys.path.insert(0, str(tmp))
            return importlib.import_module("hbvp_py")
    sys.exit("hbvp_py not found; run `cargo build -p hbvp-py --release` first")


def main():
    h = load()

    am, ap = h.alpha_pm(2.0, 3, 0)
    assert (am, ap) == (1.0, 2.0), (am, ap)

    dom = h.Domain(3, 0)
    assert dom.h == 1.5
    table = dom.exponent_table(2.0)
    assert table["exponents"]["p_sigma"] == 3.0
    assert table["exponents"]["p_boundary"] == 2.0

    x, y = [0.3, 0.1, 0.0], [-0.2, 0.4, 0.1]
    g = h.Kernel(dom, 2.0)
    assert g(x, y) > 0 and math.isclose(g(x, y), g(y, x), rel_tol=1e-12)
    n = h.Kernel(dom, 2.0, variant="n_alpha", alpha=1.0)
    assert n(x, y) > 0

    try:
        h.Domain(3, 5)
    except h.ConfigError:
        pass
    else:
        raise AssertionError("k > N-1 accepted")

    cloud = h.Cloud(dom, resolution=1500, seed=1)
    assert len(cloud) == len(cloud.weights()) > 1000

    sub = h.solve_source(dom, cloud, 2.0, 2.0, 1e-3, "dirac:1,0,0")
    assert sub["report"]["status"] == "converged", sub["report"]["status"]
    assert min(sub["values"]) >= 0
    sup = h.solve_source(dom, cloud, 2.0, 4.0, 1e-6, "dirac:1,0,0")
    assert sup["report"]["status"] == "diverged", sup["report"]["status"]

    ab = h.solve_absorption_problem(dom, cloud, 2.0, 2.0, "dirac:1,0,0:0.01")
    assert min(ab["values"]) >= 0

    cap = h.capacity_estimate(dom, cloud, "cap:0,1,0:0.2", 2.0, 3.0, -3.0, 2.0)
    assert 0 <= cap["lower"] <= cap["upper"], cap

    lam = h.Domain(3, 0).lambda_estimate(0.0, n=20)
    assert abs(lam["value"] - math.pi**2) < 0.05 * math.pi**2, lam

    diagram = h.scan("scenario.p_grid = 1.5:3.5:5\n")
    assert diagram["agreement"] >= 0.9, diagram["agreement"]

    print("hbvp_py smoke test: ok")


if __name__ == "__main__":
    main()
