import json

import numpy as np
import pytest

from dff.oracle import (
    AllocationInstance, GridGraph, PortfolioInstance, SolverError, brute_force_solve, decision_regret,
    even_allocation, load_instance, ndr_from_parts, normalized_decision_regret, regret_batch,
    regret_of_decisions, save_instance,
)

G22 = GridGraph(2, 2)


def test_grid_edge_order_and_size():
    assert G22.edges == [(0, 1), (0, 2), (1, 3), (2, 3)]
    for r, c in [(5, 5), (3, 4), (1, 3)]:
        assert GridGraph(r, c).d == r * (c - 1) + c * (r - 1)


def test_grid_examples():
    sol = G22.solve([1, 2, 3, 1])
    np.testing.assert_array_equal(sol.w, [0, 1, 0, 1])
    assert sol.objective == 3
    sol = G22.solve([-1, 2, 3, 1])
    np.testing.assert_array_equal(sol.w, [1, 0, 1, 0])
    assert sol.objective == 2


def test_grid_zero_costs_tie_break():
    g = GridGraph(3, 3)
    sol = g.solve(np.zeros(g.d))
    assert sol.objective == 0
    # lexicographically smallest edge sequence: all rights, then all downs
    assert g.path_edges(sol.w) == [0, 2, 4, 9]
    assert [g.edges[e] for e in g.path_edges(sol.w)] == [(0, 1), (1, 2), (2, 5), (5, 8)]


def test_grid_matches_enumeration():
    rng = np.random.default_rng(0)
    for r in range(1, 5):
        for c in range(1, 5):
            if r * c < 2:
                continue
            g = GridGraph(r, c)
            for _ in range(20):
                q = rng.integers(-2, 3, g.d).astype(float) if rng.random() < 0.5 else rng.standard_normal(g.d)
                a, b = g.solve(q), brute_force_solve(g, q)
                np.testing.assert_array_equal(a.w, b.w)
                assert a.objective == b.objective


def test_grid_rejects_wrong_length():
    with pytest.raises(ValueError):
        G22.solve([1, 2, 3])


def test_portfolio_examples():
    p = PortfolioInstance(np.eye(2), 10.0)
    sol = p.solve([0.1, 0.3])
    np.testing.assert_allclose(sol.w, [0, 1], atol=1e-9)
    assert abs(sol.objective - 0.3) < 1e-9
    p = PortfolioInstance(np.eye(2), 0.5)
    sol = p.solve([1.0, 1.0])
    np.testing.assert_allclose(sol.w, [0.5, 0.5], atol=1e-6)
    assert abs(sol.objective - 1.0) < 1e-9


def test_portfolio_vs_grid_search():
    rng = np.random.default_rng(1)
    for _ in range(10):
        A = rng.standard_normal((3, 3)) * 0.3
        S = A @ A.T + 0.05 * np.eye(3)
        gamma = float(np.full(3, 1 / 3) @ S @ np.full(3, 1 / 3))
        p = PortfolioInstance(S, gamma)
        c = rng.uniform(0, 1, 3)
        assert abs(p.solve(c).objective - brute_force_solve(p, c).objective) <= 1e-3


def test_portfolio_kkt_d10():
    from dff.datagen import gen_portfolio_instance

    p = gen_portfolio_instance(10, 4, seed=3)
    rng = np.random.default_rng(3)
    for _ in range(10):
        sol = p.solve(rng.uniform(0, 2, 10))
        for k in ("kkt_stationarity", "kkt_primal", "kkt_dual", "kkt_complementarity"):
            assert sol.solver_diagnostics[k] <= 1e-6, (k, sol.solver_diagnostics)


def test_portfolio_infeasible_and_invalid():
    p = PortfolioInstance(np.eye(2), 0.1)  # min risk is 0.5
    with pytest.raises(SolverError, match="minimal achievable risk"):
        p.solve([1.0, 0.0])
    with pytest.raises(ValueError):
        PortfolioInstance([[1, 2], [0, 1]], 1.0)
    with pytest.raises(ValueError):
        PortfolioInstance([[1, 0], [0, -1]], 1.0)
    with pytest.raises(ValueError):
        PortfolioInstance(np.eye(2), 0.0)


def test_allocation_examples():
    a = AllocationInstance([1, 1, 1], 1.5)
    sol = a.solve([0.9, 0.5, 0.2])
    np.testing.assert_allclose(sol.w, [1, 0.5, 0])
    assert abs(sol.objective - 1.15) < 1e-12
    assert abs(brute_force_solve(a, [0.9, 0.5, 0.2]).objective - 1.15) < 1e-12
    slack = AllocationInstance([1, 2, 0.5], 10)
    np.testing.assert_array_equal(slack.solve([0.1, 0.2, 0.3]).w, [1, 2, 0.5])
    np.testing.assert_array_equal(a.solve([0.4, 0.4, 0.4]).w, [1, 0.5, 0])


def test_allocation_matches_vertices():
    rng = np.random.default_rng(2)
    for K in range(1, 7):
        for _ in range(30):
            u = rng.uniform(0.5, 1.5, K)
            a = AllocationInstance(u, rng.uniform(0.2, 1.0) * u.sum())
            c = rng.uniform(-0.2, 1, K)
            assert abs(a.solve(c).objective - brute_force_solve(a, c).objective) <= 1e-12


def test_even_allocation():
    a = AllocationInstance([1.0, 0.2, 1.0], 1.5)
    np.testing.assert_allclose(even_allocation(a), [0.5, 0.2, 0.5])


def test_regret_examples():
    c = np.array([1.0, 2, 3, 1])
    assert decision_regret(G22, c, c) == 0
    assert decision_regret(G22, c, [0.5, 2, 0.5, 1]) == 1
    assert decision_regret(G22, c, 2.5 * c) == 0
    dr, f = regret_batch(G22, c[None], np.array([[0.5, 2, 0.5, 1]]))
    assert ndr_from_parts(dr, f) == pytest.approx(1 / 3)


def test_ndr_matches_brute_force():
    rng = np.random.default_rng(4)
    g = GridGraph(3, 3)
    C = rng.uniform(1, 2, (20, g.d))
    Ch = C + rng.normal(0, 0.5, C.shape)
    num = den = 0.0
    for c, ch in zip(C, Ch):
        best = brute_force_solve(g, c)
        w_hat = brute_force_solve(g, ch).w
        num += c @ w_hat - best.objective
        den += abs(best.objective)
    assert normalized_decision_regret(g, C, Ch) == pytest.approx(num / den, abs=1e-12)
    assert normalized_decision_regret(g, C, C) == 0


def test_ndr_maximisation_and_degenerate():
    a = AllocationInstance([1, 1], 1)
    C = np.array([[0.9, 0.1]])
    dr, f = regret_of_decisions(a, C, np.array([0.5, 0.5]))
    assert dr[0] == pytest.approx(0.4) and f[0] == pytest.approx(0.9)
    with pytest.raises(ValueError, match="degenerate"):
        ndr_from_parts(np.zeros(2), np.zeros(2))


def test_instance_roundtrip(tmp_path):
    for o in (GridGraph(3, 4), PortfolioInstance(np.eye(3) * 0.1, 0.05), AllocationInstance([1, 2], 1.5)):
        save_instance(o, tmp_path / "i.json")
        back = load_instance(tmp_path / "i.json")
        assert back.to_json() == o.to_json()
    (tmp_path / "bad.json").write_text(json.dumps({"type": "nope"}))
    with pytest.raises(ValueError):
        load_instance(tmp_path / "bad.json")
