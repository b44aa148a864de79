"""The compiled kernels and the numpy fallback must agree."""
import numpy as np
import pytest

from dff import kernels
from dff.oracle import GridGraph

pytestmark = pytest.mark.skipif(kernels.compiled is None, reason="extension not built")
py, cy = kernels.python, kernels.compiled


@pytest.mark.parametrize("shape", [(2, 2), (3, 4), (5, 5), (1, 6)])
def test_dag_identical(shape):
    g = GridGraph(*shape)
    rng = np.random.default_rng(0)
    Q = rng.integers(-3, 4, size=(300, g.d)).astype(float)  # integer costs force ties
    Q = np.vstack([Q, rng.standard_normal((100, g.d))])
    a = cy.dag_argmin_batch(Q, g.heads, g.out_start, g.out_edges)
    b = py.dag_argmin_batch(Q, g.heads, g.out_start, g.out_edges)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_best_split_identical():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        X = rng.integers(0, 5, size=(n, 3)).astype(float)
        y = rng.standard_normal(n)
        assert cy.best_split(X, y) == py.best_split(X, y)


def test_simplex_projection_close():
    rng = np.random.default_rng(2)
    for _ in range(100):
        v = rng.standard_normal(int(rng.integers(1, 20))) * 3
        a, b = cy.project_simplex(v), py.project_simplex(v)
        np.testing.assert_allclose(a, b, atol=1e-14)
        assert abs(a.sum() - 1) < 1e-12 and a.min() >= 0


def test_pga_close():
    rng = np.random.default_rng(3)
    F = rng.normal(0, 0.3, (6, 2))
    S = F @ F.T + 0.01 * np.eye(6)
    c = rng.uniform(size=6)
    step = 1.0 / (2 * np.linalg.eigvalsh(S).max() * 1.01 + 1)
    w0 = np.full(6, 1 / 6)
    a = cy.pga_simplex(c, S, 1.0, w0, step, 1e-10, 20000)
    b = py.pga_simplex(c, S, 1.0, w0, step, 1e-10, 20000)
    np.testing.assert_allclose(a[0], b[0], atol=1e-9)


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")


def test_fallback_selected_by_env():
    import os
    import subprocess
    import sys

    env = dict(os.environ, DFF_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from dff import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
