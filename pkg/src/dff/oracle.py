"""Exact decision oracles for linear objectives and the regret metrics built on them.

Every oracle exposes a *canonical minimisation* entry point,
:meth:`Oracle.argmin_batch`, which returns ``argmin_w q.w`` over the feasible
set.  Maximisation problems implement it by negating ``q``; SPO+ and the
regret code only ever talk to that canonical form.
"""
from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels


class Sense(enum.IntEnum):
    MINIMIZE = 1
    MAXIMIZE = -1


class SolverError(RuntimeError):
    """The downstream problem could not be solved (e.g. infeasible)."""


@dataclass
class OracleSolution:
    w: np.ndarray
    objective: float
    optimal: bool = True
    solver_diagnostics: dict = field(default_factory=dict)


class Oracle:
    """Base class: subclasses set ``sense``/``d`` and implement ``argmin_batch``."""

    sense: Sense = Sense.MINIMIZE
    d: int = 0
    kind: str = ""

    def argmin_batch(self, Q: np.ndarray) -> np.ndarray:
        """Rows of ``W`` minimise ``Q[r] . w`` over the feasible set."""
        raise NotImplementedError

    def check_costs(self, C) -> np.ndarray:
        C = np.asarray(C, dtype=np.float64)
        if C.shape[-1] != self.d:
            raise ValueError(f"{self.kind}: cost vector has length {C.shape[-1]}, expected {self.d}")
        return C

    def solve_batch(self, C) -> tuple[np.ndarray, np.ndarray]:
        """Optimal decisions and objectives ``c.w*`` under the oracle's own sense."""
        C = np.atleast_2d(self.check_costs(C))
        W = self.argmin_batch(self.sense * C)
        return W, np.einsum("ij,ij->i", C, W)

    def solve(self, c) -> OracleSolution:
        c = self.check_costs(c)
        W, obj = self.solve_batch(c[None, :])
        return OracleSolution(W[0], float(obj[0]), True, self.diagnostics(c, W[0]))

    def diagnostics(self, c, w) -> dict:
        return {}

    def objective(self, c, w) -> float:
        return float(np.dot(c, w))

    def to_json(self) -> dict:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# shortest path on a right/down grid


class GridGraph(Oracle):
    """Shortest source->sink path on a ``rows x cols`` grid of right/down edges.

    Edges are numbered by visiting nodes in row-major order and emitting the
    right edge, then the down edge, of each node.  Ties resolve to the
    lexicographically smallest edge-index sequence.
    """

    sense = Sense.MINIMIZE
    kind = "grid"

    def __init__(self, rows: int = 5, cols: int = 5):
        if rows < 1 or cols < 1 or rows * cols < 2:
            raise ValueError(f"grid needs at least two nodes, got {rows}x{cols}")
        self.rows, self.cols = int(rows), int(cols)
        edges = []
        for i in range(self.rows):
            for j in range(self.cols):
                v = i * self.cols + j
                if j + 1 < self.cols:
                    edges.append((v, v + 1))
                if i + 1 < self.rows:
                    edges.append((v, v + self.cols))
        self.edges = edges
        self.d = len(edges)
        self.tails = np.array([e[0] for e in edges], dtype=np.int64)
        self.heads = np.array([e[1] for e in edges], dtype=np.int64)
        n_nodes = self.rows * self.cols
        self.out_start = np.searchsorted(self.tails, np.arange(n_nodes + 1)).astype(np.int64)
        self.out_edges = np.arange(self.d, dtype=np.int64)

    def argmin_batch(self, Q):
        W, _ = kernels.dag_argmin_batch(np.ascontiguousarray(Q, dtype=np.float64), self.heads, self.out_start, self.out_edges)
        return W

    def solve(self, c):
        c = self.check_costs(c)
        W, obj = kernels.dag_argmin_batch(np.ascontiguousarray(c[None, :]), self.heads, self.out_start, self.out_edges)
        return OracleSolution(W[0], float(obj[0]), True, {"path_edges": float(W[0].sum())})

    def to_json(self):
        return {"type": "grid", "rows": self.rows, "cols": self.cols}

    def path_edges(self, w) -> list[int]:
        return [int(e) for e in np.flatnonzero(np.asarray(w) > 0.5)]


def solve_grid_shortest_path(graph: GridGraph, c) -> OracleSolution:
    return graph.solve(c)


# ---------------------------------------------------------------------------
# risk-constrained portfolio


def _power_iteration(S: np.ndarray, iters: int = 500, tol: float = 1e-12) -> float:
    v = np.ones(S.shape[0]) / np.sqrt(S.shape[0])
    lam = 0.0
    for _ in range(iters):
        u = S @ v
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        v = u / nrm
        new = float(v @ S @ v)
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    # power iteration approaches from below; pad so 1/L stays a safe step
    return lam * 1.01


class PortfolioInstance(Oracle):
    """``max c.w`` s.t. ``w >= 0``, ``sum(w) = 1``, ``w' Sigma w <= gamma``.

    Solved by root-finding on the risk multiplier ``lam``; each inner problem
    ``max c.w - lam w'Sigma w`` over the simplex is handled by projected
    gradient ascent with an exact simplex projection.
    """

    sense = Sense.MAXIMIZE
    kind = "portfolio"
    tol_grad = 1e-8
    max_inner = 10_000

    def __init__(self, Sigma, gamma: float):
        S = np.array(Sigma, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("Sigma must be square")
        if not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("Sigma must be symmetric")
        S = 0.5 * (S + S.T)
        if np.linalg.eigvalsh(S).min() < -1e-10:
            raise ValueError("Sigma must be positive semi-definite")
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        self.Sigma = np.ascontiguousarray(S)
        self.gamma = float(gamma)
        self.d = S.shape[0]
        self.max_eig = _power_iteration(S)

    @cached_property
    def min_risk(self) -> float:
        w, _, _ = self._inner(np.zeros(self.d), 1.0, np.full(self.d, 1.0 / self.d))
        return float(w @ self.Sigma @ w)

    def risk(self, w) -> float:
        return float(w @ self.Sigma @ w)

    def _inner(self, c, lam, w0):
        step = 1.0 / (2.0 * lam * self.max_eig + 1.0)
        return kernels.pga_simplex(c, self.Sigma, float(lam), w0, step, self.tol_grad, self.max_inner)

    def maximize(self, c) -> tuple[np.ndarray, dict]:
        c = np.ascontiguousarray(c, dtype=np.float64)
        w0 = np.full(self.d, 1.0 / self.d)
        w, it, gm = self._inner(c, 0.0, w0)
        iters = it
        if self.risk(w) <= self.gamma:
            return w, {"lambda": 0.0, "iterations": float(iters), "grad_map": gm, "root_steps": 0.0}
        if self.min_risk > self.gamma * (1 + 1e-12):
            raise SolverError(
                f"portfolio infeasible: minimal achievable risk {self.min_risk:.6g} exceeds gamma={self.gamma:.6g}"
            )
        lo, f_lo = 0.0, self.risk(w) - self.gamma
        hi, w_hi = 1.0, w
        for _ in range(200):
            w_hi, it, gm = self._inner(c, hi, w_hi)
            iters += it
            f_hi = self.risk(w_hi) - self.gamma
            if f_hi <= 0:
                break
            lo, f_lo = hi, f_hi
            hi *= 2.0
        else:
            raise SolverError("portfolio: could not bracket the risk multiplier")
        # Illinois regula falsi on risk(lam) - gamma, which is non-increasing in lam
        best_w, best_lam, best_gm = w_hi, hi, gm
        w_cur, side, steps = w_hi, 0, 0
        for steps in range(1, 300):
            if best_lam * abs(f_hi) <= 1e-10 or hi - lo <= 1e-15 * hi:
                break
            lam = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
            if not lo < lam < hi:
                lam = 0.5 * (lo + hi)
            w_cur, it, gm = self._inner(c, lam, w_cur)
            iters += it
            f = self.risk(w_cur) - self.gamma
            if f <= 0:
                hi, f_hi = lam, f
                best_w, best_lam, best_gm = w_cur, lam, gm
                if side == -1:
                    f_lo *= 0.5
                side = -1
            else:
                lo, f_lo = lam, f
                if side == 1:
                    f_hi *= 0.5
                side = 1
        return best_w, {"lambda": best_lam, "iterations": float(iters), "grad_map": best_gm, "root_steps": float(steps)}

    def argmin_batch(self, Q):
        Q = np.atleast_2d(Q)
        return np.stack([self.maximize(-q)[0] for q in Q])

    def solve(self, c):
        c = self.check_costs(c)
        w, diag = self.maximize(c)
        diag.update(self.kkt_residuals(c, w, diag["lambda"]))
        return OracleSolution(w, float(c @ w), True, diag)

    def kkt_residuals(self, c, w, lam) -> dict:
        """KKT residuals of ``max c.w`` s.t. simplex and risk, at multiplier ``lam``."""
        c = np.asarray(c, dtype=np.float64)
        g = c - 2.0 * lam * (self.Sigma @ w)
        supp = w > 0
        mu = float(g[supp].mean()) if supp.any() else float(g.max())
        stationarity = float(np.abs(g[supp] - mu).max()) if supp.any() else 0.0
        nu = mu - g  # multipliers of w >= 0
        dual = max(0.0, -lam, float(-nu[~supp].min()) if (~supp).any() else 0.0)
        risk = self.risk(w)
        primal = max(0.0, risk - self.gamma, float(-w.min()), abs(float(w.sum()) - 1.0))
        comp = max(lam * abs(risk - self.gamma), float(np.abs(w * np.maximum(nu, 0.0)).max()))
        return {"kkt_stationarity": stationarity, "kkt_primal": primal, "kkt_dual": dual, "kkt_complementarity": comp}

    def to_json(self):
        return {"type": "portfolio", "Sigma": self.Sigma.tolist(), "gamma": self.gamma}


def solve_portfolio(instance: PortfolioInstance, c) -> OracleSolution:
    return instance.solve(c)


# ---------------------------------------------------------------------------
# budget allocation


class AllocationInstance(Oracle):
    """``max c.w`` s.t. ``0 <= w <= u`` and ``sum(w) <= B`` (box-capped fractional knapsack)."""

    sense = Sense.MAXIMIZE
    kind = "allocation"

    def __init__(self, caps, budget: float):
        u = np.array(caps, dtype=np.float64).ravel()
        if (u <= 0).any():
            raise ValueError("allocation caps must be positive")
        if not budget > 0:
            raise ValueError(f"budget must be positive, got {budget}")
        self.caps = u
        self.budget = float(budget)
        self.d = len(u)
        self.budget_vacuous = self.budget >= u.sum()

    @property
    def K(self) -> int:
        return self.d

    def maximize_batch(self, C) -> np.ndarray:
        """Greedy fill by descending rate; ties go to the lowest city index.

        Cities with a non-positive coefficient receive nothing.
        """
        C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        order = np.argsort(-C, axis=1, kind="stable")
        caps = self.caps[order]
        before = np.zeros_like(caps)
        before[:, 1:] = np.cumsum(caps[:, :-1], axis=1)
        fill = np.clip(self.budget - before, 0.0, caps)
        fill = np.where(np.take_along_axis(C, order, axis=1) > 0, fill, 0.0)
        W = np.empty_like(fill)
        np.put_along_axis(W, order, fill, axis=1)
        return W

    def argmin_batch(self, Q):
        return self.maximize_batch(-np.asarray(Q))

    def diagnostics(self, c, w):
        out = int(((c < 0) | (c > 1)).sum())
        return {"out_of_range_rates": float(out), "budget_used": float(w.sum()), "budget_vacuous": float(self.budget_vacuous)}

    def to_json(self):
        return {"type": "allocation", "caps": self.caps.tolist(), "budget": self.budget}


def solve_allocation(instance: AllocationInstance, c) -> OracleSolution:
    return instance.solve(c)


def even_allocation(instance: AllocationInstance) -> np.ndarray:
    """Rule-based baseline: the budget split equally across cities, capped per city."""
    return np.minimum(instance.caps, instance.budget / instance.d)


# ---------------------------------------------------------------------------
# brute force (tests only)


def brute_force_solve(problem: Oracle, c) -> OracleSolution:
    """Exhaustive optimum for small instances, under the problem's own sense."""
    c = problem.check_costs(c)
    if isinstance(problem, GridGraph):
        if problem.rows > 4 or problem.cols > 4:
            raise ValueError("brute force limited to grids up to 4x4")
        best = None
        for path in _grid_paths(problem):
            obj = 0.0
            for e in path:
                obj = obj + c[e]
            key = (obj, tuple(path))
            if best is None or key < best:
                best = key
        w = np.zeros(problem.d)
        w[list(best[1])] = 1.0
        return OracleSolution(w, best[0], True, {"enumerated": 1.0})
    if isinstance(problem, AllocationInstance):
        if problem.d > 6:
            raise ValueError("brute force limited to K <= 6 cities")
        best_w, best_obj = None, -np.inf
        for w in _allocation_vertices(problem):
            obj = float(c @ w)
            if obj > best_obj:
                best_w, best_obj = w, obj
        return OracleSolution(best_w, best_obj, True, {"enumerated": 1.0})
    if isinstance(problem, PortfolioInstance):
        if problem.d > 3:
            raise ValueError("brute force limited to d <= 3 assets")
        G = _simplex_grid(problem.d, 1000)
        risk = np.einsum("ij,jk,ik->i", G, problem.Sigma, G)
        ok = risk <= problem.gamma
        if not ok.any():
            raise SolverError("no grid point satisfies the risk budget")
        obj = np.where(ok, G @ c, -np.inf)
        k = int(np.argmax(obj))
        return OracleSolution(G[k], float(obj[k]), True, {"grid_resolution": 1e-3})
    raise TypeError(f"no brute force for {type(problem).__name__}")


def _grid_paths(g: GridGraph):
    index = {e: k for k, e in enumerate(g.edges)}
    n_moves = g.rows + g.cols - 2
    for downs in itertools.combinations(range(n_moves), g.rows - 1):
        v, path = 0, []
        for step in range(n_moves):
            nxt = v + g.cols if step in downs else v + 1
            path.append(index[(v, nxt)])
            v = nxt
        yield path


def _allocation_vertices(a: AllocationInstance):
    K, u, B = a.d, a.caps, a.budget
    for at_cap in itertools.product((0, 1), repeat=K):
        base = np.where(np.array(at_cap) == 1, u, 0.0)
        used = base.sum()
        if used <= B:
            yield base
        for f in range(K):
            if at_cap[f]:
                continue
            rest = B - used
            if 0.0 <= rest <= u[f]:
                w = base.copy()
                w[f] = rest
                yield w


def _simplex_grid(d: int, m: int) -> np.ndarray:
    if d == 1:
        return np.ones((1, 1))
    if d == 2:
        a = np.arange(m + 1) / m
        return np.stack([a, 1.0 - a], axis=1)
    i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    mask = i + j <= m
    i, j = i[mask], j[mask]
    return np.stack([i, j, m - i - j], axis=1) / m


# ---------------------------------------------------------------------------
# regret metrics

REGRET_TOL = 1e-6


def _clamp_regret(dr: np.ndarray, scale: np.ndarray) -> np.ndarray:
    if (dr < -REGRET_TOL * np.maximum(1.0, scale)).any():
        raise SolverError(f"negative decision regret {dr.min():.3g} beyond solver tolerance")
    return np.maximum(dr, 0.0)


def regret_batch(oracle: Oracle, C, C_hat, W_star=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample decision regret and optimal objective ``f(w*(c), c)``."""
    C = np.atleast_2d(oracle.check_costs(C))
    C_hat = np.atleast_2d(oracle.check_costs(C_hat))
    if C.shape != C_hat.shape:
        raise ValueError(f"{C.shape[0]} true cost rows but {C_hat.shape[0]} predictions")
    if W_star is None:
        W_star, _ = oracle.solve_batch(C)
    W_hat, _ = oracle.solve_batch(C_hat)
    f_star = np.einsum("ij,ij->i", C, W_star)
    f_hat = np.einsum("ij,ij->i", C, W_hat)
    dr = oracle.sense * (f_hat - f_star)
    return _clamp_regret(dr, np.abs(f_star)), f_star


def decision_regret(oracle: Oracle, c, c_hat) -> float:
    dr, _ = regret_batch(oracle, np.asarray(c)[None], np.asarray(c_hat)[None])
    return float(dr[0])


def average_decision_regret(oracle: Oracle, C, C_hat) -> float:
    dr, _ = regret_batch(oracle, _costs(C), C_hat)
    return float(dr.mean())


def normalized_decision_regret(oracle: Oracle, C, C_hat, W_star=None) -> float:
    """Total regret over total absolute optimal objective."""
    dr, f_star = regret_batch(oracle, _costs(C), C_hat, W_star)
    return ndr_from_parts(dr, f_star)


def ndr_from_parts(dr, f_star) -> float:
    denom = float(np.abs(f_star).sum())
    if denom < 1e-12:
        raise ValueError("degenerate normalization: optimal objectives sum to ~0")
    return float(np.sum(dr)) / denom


def regret_of_decisions(oracle: Oracle, C, W, W_star=None) -> tuple[np.ndarray, np.ndarray]:
    """Regret of fixed decisions ``W`` (e.g. a rule-based allocation) against the truth."""
    C = np.atleast_2d(oracle.check_costs(_costs(C)))
    W = np.broadcast_to(W, C.shape)
    if W_star is None:
        W_star, _ = oracle.solve_batch(C)
    f_star = np.einsum("ij,ij->i", C, W_star)
    dr = oracle.sense * (np.einsum("ij,ij->i", C, W) - f_star)
    return _clamp_regret(dr, np.abs(f_star)), f_star


def _costs(C):
    return C.C if hasattr(C, "C") else C


# ---------------------------------------------------------------------------
# instance files


def oracle_from_json(spec: dict) -> Oracle:
    kind = spec.get("type")
    if kind == "grid":
        return GridGraph(int(spec["rows"]), int(spec["cols"]))
    if kind == "portfolio":
        return PortfolioInstance(spec["Sigma"], float(spec["gamma"]))
    if kind == "allocation":
        return AllocationInstance(spec["caps"], float(spec["budget"]))
    raise ValueError(f"unknown instance type {kind!r}; expected grid, portfolio or allocation")


def load_instance(path) -> Oracle:
    return oracle_from_json(json.loads(Path(path).read_text()))


def save_instance(oracle: Oracle, path) -> None:
    Path(path).write_text(json.dumps(oracle.to_json(), indent=2) + "\n")
