from fractions import Fraction

import numpy as np
import pytest

from dff.backbone import (
    BackboneError, FitError, LinearModel, OpaqueBackbone, SimulationParams, TreeEnsemble,
    crossfit_predict_train, fit_gbt, fit_gls, fit_ols, fit_random_forest, fit_tree, predict,
    simulation_backbone,
)


def gauss_solve(A, b):
    """Independent oracle: Gaussian elimination with partial pivoting in pure Python."""
    n = len(A)
    M = [list(map(float, A[i])) + [float(b[i])] for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(M[r][col]))
        M[col], M[piv] = M[piv], M[col]
        for r in range(col + 1, n):
            f = M[r][col] / M[col][col]
            for k in range(col, n + 1):
                M[r][k] -= f * M[col][k]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (M[r][n] - sum(M[r][k] * x[k] for k in range(r + 1, n))) / M[r][r]
    return x


def test_ols_identity_design():
    Y = np.random.default_rng(0).standard_normal((3, 2))
    np.testing.assert_allclose(fit_ols(np.eye(3), Y).beta, Y, atol=1e-12)


def test_ols_noiseless_recovery():
    rng = np.random.default_rng(1)
    X, B0 = rng.standard_normal((50, 4)), rng.standard_normal((4, 3))
    np.testing.assert_allclose(fit_ols(X, X @ B0).beta, B0, atol=1e-8)
    m = fit_ols(X, X @ B0 + 2.0, intercept=True)
    np.testing.assert_allclose(m.intercept, 2.0, atol=1e-8)


def test_ols_matches_gaussian_elimination():
    rng = np.random.default_rng(2)
    for _ in range(5):
        X, y = rng.standard_normal((20, 3)), rng.standard_normal(20)
        ref = gauss_solve(X.T @ X, X.T @ y)
        np.testing.assert_allclose(fit_ols(X, y).beta[:, 0], ref, atol=1e-8)


def test_ols_ridge_fallback_and_failure():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    m = fit_ols(X, np.array([1.0, 2.0, 3.0]))
    assert m.ridge > 0
    with pytest.raises(FitError):
        fit_ols(np.zeros((3, 2)), np.ones(3))


def test_gls_identity_equals_ols():
    rng = np.random.default_rng(3)
    X, Y = rng.standard_normal((30, 3)), rng.standard_normal((30, 2))
    Q = np.broadcast_to(np.eye(2), (30, 2, 2))
    np.testing.assert_allclose(fit_gls(X, Y, Q).beta, fit_ols(X, Y).beta, atol=1e-8)


def test_gls_scalar_weights_hand_solved():
    # sum q x y / sum q x^2 = (1 + 8 + 6) / (1 + 8 + 9) = 5/6
    X = np.array([[1.0], [2.0], [3.0]])
    y = np.array([1.0, 2.0, 2.0])
    beta = fit_gls(X, y, np.array([1.0, 2.0, 1.0])).beta[0, 0]
    assert beta == pytest.approx(float(Fraction(5, 6)), abs=1e-12)


def test_gls_anisotropic_hand_solved():
    # (1*Q1 + 4*I) b = Q1 y1 + 2 y2  ->  [[6,1],[1,5]] b = (2,3)  ->  b = (7, 16) / 29
    X = np.array([[1.0], [2.0]])
    Y = np.array([[1.0, 0.0], [0.0, 1.0]])
    Q = np.array([[[2.0, 1.0], [1.0, 1.0]], np.eye(2)])
    np.testing.assert_allclose(fit_gls(X, Y, Q).beta[0], [7 / 29, 16 / 29], atol=1e-12)
    np.testing.assert_allclose(fit_ols(X, Y).beta[0], [0.2, 0.4], atol=1e-12)


def test_gls_bad_shape():
    with pytest.raises(ValueError):
        fit_gls(np.ones((2, 1)), np.ones((2, 2)), np.ones((2, 3, 3)))


def test_linear_model_json_roundtrip(tmp_path):
    m = LinearModel(np.array([[0.1, 1 / 3]]), np.array([2.0, -1.0]))
    m.save(tmp_path / "m.json")
    back = LinearModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.beta, m.beta)
    np.testing.assert_array_equal(back.predict([[2.0]]), m.predict([[2.0]]))


def test_tree_step_function():
    X = np.linspace(-1, 1, 40)[:, None]
    y = np.where(X[:, 0] > 0.2, 3.0, -1.0)
    t = fit_tree(X, y, max_depth=2)
    np.testing.assert_allclose(t.predict(X), y, atol=1e-12)
    assert t.depth <= 2


def test_gbt_properties():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((40, 2))
    const = fit_gbt(X, np.full(40, 2.5), n_trees=5)
    np.testing.assert_allclose(const.predict(X), 2.5)
    y = np.where(X[:, 0] > 0, 1.0, 0.0)
    m = fit_gbt(X, y, n_trees=100)
    assert np.mean((m.predict(X)[:, 0] - y) ** 2) <= 1e-3
    frozen = fit_gbt(X, y, n_trees=10, shrinkage=0.0)
    np.testing.assert_allclose(frozen.predict(X), y.mean())


def test_forest_properties():
    rng = np.random.default_rng(5)
    X, y = rng.standard_normal((30, 3)), rng.standard_normal(30)
    one = fit_random_forest(X, y, n_trees=1, subsample=1.0)
    np.testing.assert_array_equal(one.predict(X)[:, 0], fit_tree(X, y).predict(X))
    np.testing.assert_allclose(fit_random_forest(X, np.full(30, -1.0), 5).predict(X), -1.0)
    f = fit_random_forest(X, y, n_trees=50, seed=1)
    assert np.mean((f.predict(X)[:, 0] - y) ** 2) <= y.var()


def test_ensemble_dump_bit_exact(tmp_path):
    rng = np.random.default_rng(6)
    X, Y = rng.standard_normal((30, 2)), rng.standard_normal((30, 2))
    for m in (fit_gbt(X, Y, 10), fit_random_forest(X, Y, 10, seed=2)):
        m.save(tmp_path / "e.txt")
        np.testing.assert_array_equal(TreeEnsemble.load(tmp_path / "e.txt").predict(X), m.predict(X))


def test_ensemble_limits():
    with pytest.raises(ValueError):
        fit_gbt(np.ones((3, 1)), np.ones(3), n_trees=101)


def test_opaque_backbone():
    b = OpaqueBackbone(lambda X: X[:, :2], 2, "first two")
    X = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(b.predict(X), X[:, :2])
    np.testing.assert_array_equal(predict(b, X[0]), X[0, :2])
    with pytest.raises(BackboneError):
        OpaqueBackbone(lambda X: X, 2).predict(X)
    with pytest.raises(BackboneError):
        OpaqueBackbone(lambda X: X[:, :2] * np.nan, 2).predict(X)


def test_simulation_backbone():
    rng = np.random.default_rng(7)
    K, p = 4, 3
    params = SimulationParams(rng.integers(0, 2, (K, p)).astype(float), rng.uniform(0, 1, K),
                              rng.uniform(-1, 1, K), rng.uniform(-1, 1, K))
    X = rng.standard_normal((10, p))
    Z = params.solve(X)
    assert np.abs(Z - params.step(X, Z)).max() <= 1e-10
    np.testing.assert_array_equal(simulation_backbone(params).predict(X), Z)
    flat = SimulationParams(params.mixing, np.zeros(K), params.b, params.c0)
    out = flat.solve(X)
    np.testing.assert_allclose(out, np.broadcast_to(out[0], out.shape), atol=1e-12)


def test_crossfit_bookkeeping():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((4, 2))
    Y = rng.standard_normal((4, 1))
    seen = []

    def fit_fn(Xf, Yf):
        seen.append({tuple(r) for r in Xf})
        return fit_ols(Xf, Yf)

    oof, cf = crossfit_predict_train(X, Y, 2, fit_fn, seed=0)
    for i in range(4):
        f = cf.fold_of(i)
        assert tuple(X[i]) not in seen[f]
        np.testing.assert_allclose(oof[i], cf.models[f].predict(X[i:i + 1])[0], rtol=1e-12)
    oof2, _ = crossfit_predict_train(X, Y, 2, fit_ols, seed=0)
    np.testing.assert_array_equal(oof, oof2)


def test_crossfit_noiseless_linear():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((40, 3))
    Y = X @ rng.standard_normal((3, 2))
    oof, cf = crossfit_predict_train(X, Y, 2, fit_ols, seed=1)
    np.testing.assert_allclose(oof, Y, atol=1e-6)
    np.testing.assert_allclose(cf.predict(X), Y, atol=1e-6)
