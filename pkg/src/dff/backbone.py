"""Predictive backbones ``x -> c_hat``: closed-form linear fits, tree ensembles,
opaque simulators, and cross-fitting.

Every backbone exposes ``predict(X) -> (N, d) array``.  None of them is
required to be differentiable; the correction layer only ever sees their
outputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels
from .core import kfold_partition, make_rng


class FitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# linear models


@dataclass
class LinearModel:
    """``c_hat = beta.T @ x (+ intercept)``; ``beta`` is p x d."""

    beta: np.ndarray
    intercept: np.ndarray | None = None
    ridge: float = 0.0

    @property
    def d(self) -> int:
        return self.beta.shape[1]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = X @ self.beta
        if self.intercept is not None:
            out = out + self.intercept
        return out

    def to_json(self) -> dict:
        return {
            "kind": "linear",
            "beta": [[float(v).hex() for v in row] for row in self.beta],
            "intercept": None if self.intercept is None else [float(v).hex() for v in self.intercept],
            "ridge": float(self.ridge).hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearModel":
        beta = np.array([[float.fromhex(v) for v in row] for row in obj["beta"]])
        icpt = obj.get("intercept")
        return cls(beta, None if icpt is None else np.array([float.fromhex(v) for v in icpt]), float.fromhex(obj.get("ridge", "0x0p+0")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "LinearModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _augment(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


def fit_ols(X, Y, intercept: bool = False) -> LinearModel:
    """Least squares ``beta = (X'X)^-1 X'Y``.

    Near-singular Gram matrices get a ridge of ``1e-8 * trace(X'X) / p``;
    the applied penalty is recorded on the model.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    Y = Y[:, None] if Y.ndim == 1 else Y
    Xa = _augment(X) if intercept else X
    G = Xa.T @ Xa
    ridge = 0.0
    eig = np.linalg.eigvalsh(G)
    if eig[0] < 1e-10 or eig[0] < 1e-12 * eig[-1]:
        ridge = 1e-8 * np.trace(G) / G.shape[0]
        G = G + ridge * np.eye(G.shape[0])
        eig = np.linalg.eigvalsh(G)
        if eig[0] < 1e-10:
            cond = eig[-1] / max(eig[0], np.finfo(float).tiny)
            raise FitError(f"X'X is rank deficient even with ridge {ridge:.3g} (condition ~{cond:.3g})")
    B = np.linalg.solve(G, Xa.T @ Y)
    if intercept:
        return LinearModel(B[:-1], B[-1].copy(), ridge)
    return LinearModel(B, None, ridge)


def fit_gls(X, Y, Q, intercept: bool = False) -> LinearModel:
    """Minimise ``sum_i (y_i - beta' x_i)' Q_i (y_i - beta' x_i)``.

    ``beta`` (p x d) is vectorised column-major, ``b[k*p + j] = beta[j, k]``,
    so ``beta' x_i = (I_d kron x_i') b`` and the normal equations read
    ``(sum_i Q_i kron x_i x_i') b = sum_i (Q_i y_i) kron x_i``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    Y = Y[:, None] if Y.ndim == 1 else Y
    Xa = _augment(X) if intercept else X
    n, p = Xa.shape
    d = Y.shape[1]
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim == 1:  # scalar weight per sample
        Q = Q[:, None, None] * np.eye(d)
    if Q.shape != (n, d, d):
        raise ValueError(f"Q must have shape ({n}, {d}, {d}), got {Q.shape}")
    M = np.einsum("nab,ni,nj->aibj", Q, Xa, Xa).reshape(d * p, d * p)
    rhs = np.einsum("nab,nb,ni->ai", Q, Y, Xa).reshape(d * p)
    eig = np.linalg.eigvalsh(0.5 * (M + M.T))
    if eig[0] <= 1e-12 * max(eig[-1], 1.0):
        raise FitError(f"GLS normal equations are singular (smallest eigenvalue {eig[0]:.3g})")
    b = np.linalg.solve(M, rhs)
    B = b.reshape(d, p).T
    if intercept:
        return LinearModel(B[:-1].copy(), B[-1].copy())
    return LinearModel(B)


# ---------------------------------------------------------------------------
# regression trees


@dataclass
class RegressionTree:
    """Axis-aligned binary tree stored as flat node arrays (``feature == -1`` marks a leaf)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        def rec(i):
            return 0 if self.feature[i] < 0 else 1 + max(rec(self.left[i]), rec(self.right[i]))

        return rec(0)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            idx = np.flatnonzero(inner)
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])


def fit_tree(X, y, max_depth: int = 2, min_samples_leaf: int = 1) -> RegressionTree:
    """Exact greedy squared-error tree; thresholds are midpoints of sorted unique values."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    feat, thr, left, right, val = [], [], [], [], []

    def grow(rows, depth):
        me = len(feat)
        yr = y[rows]
        feat.append(-1), thr.append(0.0), left.append(-1), right.append(-1), val.append(float(yr.mean()))
        if depth >= max_depth or len(rows) < 2 * min_samples_leaf or yr.max() == yr.min():
            return me
        j, t, gain = kernels.best_split(np.ascontiguousarray(X[rows]), np.ascontiguousarray(yr))
        sse = float(((yr - yr.mean()) ** 2).sum())
        if j < 0 or not gain > 1e-12 * sse:
            return me
        mask = X[rows, j] <= t
        if mask.sum() < min_samples_leaf or (~mask).sum() < min_samples_leaf:
            return me
        feat[me], thr[me] = j, t
        left[me] = grow(rows[mask], depth + 1)
        right[me] = grow(rows[~mask], depth + 1)
        return me

    grow(np.arange(X.shape[0]), 0)
    return RegressionTree(
        np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64), np.array(val),
    )


@dataclass
class TreeEnsemble:
    """One list of trees per output dimension.

    ``kind == "gbt"``: ``base + shrinkage * sum(trees)``.
    ``kind == "forest"``: ``mean(trees)`` (``base`` and ``shrinkage`` unused).
    """

    kind: str
    base: np.ndarray
    shrinkage: float
    trees: list[list[RegressionTree]]
    max_depth: int = 2

    @property
    def d(self) -> int:
        return len(self.trees)

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty((X.shape[0], self.d))
        for k, ts in enumerate(self.trees):
            ts = ts if n_trees is None else ts[:n_trees]
            if self.kind == "forest":
                out[:, k] = np.mean([t.predict(X) for t in ts], axis=0)
            else:
                acc = np.full(X.shape[0], self.base[k])
                for t in ts:
                    acc = acc + self.shrinkage * t.predict(X)
                out[:, k] = acc
        return out

    # line-oriented dump; floats are written with float.hex so a reload is bit-exact
    def dumps(self) -> str:
        lines = [f"ensemble {self.kind} d={self.d} max_depth={self.max_depth} shrinkage={float(self.shrinkage).hex()}"]
        lines.append("base " + " ".join(float(v).hex() for v in self.base))
        for k, ts in enumerate(self.trees):
            for i, t in enumerate(ts):
                lines.append(f"tree {k} {i} {len(t.feature)}")
                for n in range(len(t.feature)):
                    lines.append(
                        f"node {n} {int(t.feature[n])} {float(t.threshold[n]).hex()} "
                        f"{int(t.left[n])} {int(t.right[n])} {float(t.value[n]).hex()}"
                    )
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "TreeEnsemble":
        lines = text.splitlines()
        head = lines[0].split()
        if head[0] != "ensemble":
            raise ValueError("not a tree ensemble dump")
        kv = dict(tok.split("=") for tok in head[2:])
        d = int(kv["d"])
        base = np.array([float.fromhex(v) for v in lines[1].split()[1:]])
        trees: list[list[RegressionTree]] = [[] for _ in range(d)]
        i = 2
        while i < len(lines):
            _, k, _, n = lines[i].split()
            rows = [ln.split() for ln in lines[i + 1:i + 1 + int(n)]]
            trees[int(k)].append(RegressionTree(
                np.array([int(r[2]) for r in rows], dtype=np.int64),
                np.array([float.fromhex(r[3]) for r in rows]),
                np.array([int(r[4]) for r in rows], dtype=np.int64),
                np.array([int(r[5]) for r in rows], dtype=np.int64),
                np.array([float.fromhex(r[6]) for r in rows]),
            ))
            i += 1 + int(n)
        return cls(head[1], base, float.fromhex(kv["shrinkage"]), trees, int(kv["max_depth"]))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        return cls.loads(Path(path).read_text())


def fit_gbt(X, Y, n_trees: int = 100, max_depth: int = 2, shrinkage: float = 0.1) -> TreeEnsemble:
    """First-order gradient boosting on squared error, one tree sequence per output."""
    if not 1 <= n_trees <= 100:
        raise ValueError("n_trees must be in [1, 100]")
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    Y = Y[:, None] if Y.ndim == 1 else Y
    if X.shape[0] < 2:
        raise FitError("boosting needs at least two samples")
    base = Y.mean(axis=0)
    trees = []
    for k in range(Y.shape[1]):
        pred = np.full(X.shape[0], base[k])
        seq = []
        for _ in range(n_trees):
            t = fit_tree(X, Y[:, k] - pred, max_depth)
            pred = pred + shrinkage * t.predict(X)
            seq.append(t)
        trees.append(seq)
    return TreeEnsemble("gbt", base, float(shrinkage), trees, max_depth)


def fit_random_forest(X, Y, n_trees: int = 100, max_depth: int = 2, subsample: float = 0.5, seed: int = 0) -> TreeEnsemble:
    """Average of trees fit on independent without-replacement subsamples."""
    if not 1 <= n_trees <= 100:
        raise ValueError("n_trees must be in [1, 100]")
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    Y = Y[:, None] if Y.ndim == 1 else Y
    n = X.shape[0]
    m = max(1, int(np.floor(subsample * n)))
    rng = make_rng(seed, "forest")
    samples = [np.sort(rng.choice(n, size=m, replace=False)) for _ in range(n_trees)]
    trees = [[fit_tree(X[s], Y[s, k], max_depth) for s in samples] for k in range(Y.shape[1])]
    return TreeEnsemble("forest", Y.mean(axis=0), 1.0, trees, max_depth)


# ---------------------------------------------------------------------------
# opaque backbones


class BackboneError(RuntimeError):
    pass


@dataclass
class OpaqueBackbone:
    """Prediction-only wrapper around an arbitrary function; no gradients available."""

    fn: Callable[[np.ndarray], np.ndarray]
    d: int
    description: str = "opaque"

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        try:
            out = np.asarray(self.fn(X), dtype=np.float64)
        except Exception as exc:
            raise BackboneError(f"backbone {self.description!r} failed: {exc}") from exc
        out = out.reshape(X.shape[0], -1)
        if out.shape[1] != self.d:
            raise BackboneError(f"backbone {self.description!r} returned {out.shape[1]} outputs, expected {self.d}")
        if not np.isfinite(out).all():
            raise BackboneError(f"backbone {self.description!r} returned non-finite predictions")
        return out


def predict(backbone, X) -> np.ndarray:
    """Uniform ``c_hat = M(x)`` over every backbone kind; 1-d input gives a 1-d output."""
    X = np.asarray(X, dtype=np.float64)
    out = backbone.predict(np.atleast_2d(X))
    return out[0] if X.ndim == 1 else out


@dataclass
class SimulationParams:
    """Toy market simulator: each city's conversion rate ``z`` solves
    ``z = sigmoid(a * s + b * z + c0)`` with subsidy signal ``s = mixing @ x / sqrt(p)``."""

    mixing: np.ndarray  # K x p
    a: np.ndarray
    b: np.ndarray
    c0: np.ndarray
    damping: float = 0.5
    tol: float = 1e-12
    max_iter: int = 1000

    def subsidy_signal(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.mixing.T / np.sqrt(self.mixing.shape[1])

    def step(self, X, Z) -> np.ndarray:
        """The undamped fixed-point map."""
        return _sigmoid(self.a * self.subsidy_signal(X) + self.b * Z + self.c0)

    def solve(self, X) -> np.ndarray:
        s = self.subsidy_signal(X)
        z = np.full(s.shape, 0.5)
        for _ in range(self.max_iter):
            nxt = _sigmoid(self.a * s + self.b * z + self.c0)
            if np.max(np.abs(nxt - z)) <= self.tol:
                return nxt
            z = (1.0 - self.damping) * z + self.damping * nxt
        raise BackboneError(f"simulation fixed point did not converge in {self.max_iter} iterations")


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def simulation_backbone(params: SimulationParams) -> OpaqueBackbone:
    return OpaqueBackbone(params.solve, params.mixing.shape[0], "market fixed-point simulator")


# ---------------------------------------------------------------------------
# cross-fitting


@dataclass
class CrossFitBackbone:
    """``k`` fold-models; fold ``f``'s model never saw fold ``f``.

    At test time the fold-models are averaged (``mode="average"``); with
    ``mode="full"`` a model refit on all data is used instead.
    """

    models: list
    folds: list[np.ndarray]
    full_model: object = None
    mode: str = "average"
    d: int = field(default=0)

    def predict(self, X) -> np.ndarray:
        if self.mode == "full":
            if self.full_model is None:
                raise BackboneError("cross-fit backbone has no full-data model")
            return self.full_model.predict(X)
        return np.mean([m.predict(X) for m in self.models], axis=0)

    def fold_of(self, i: int) -> int:
        for f, idx in enumerate(self.folds):
            if i in idx:
                return f
        raise IndexError(i)


def crossfit_predict_train(X, Y, k: int, fit_fn: Callable, seed: int, refit_full: bool = False):
    """Out-of-fold predictions for every training row plus the fold-models.

    ``fit_fn(X, Y)`` must return an object with ``predict``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    Y = Y[:, None] if Y.ndim == 1 else Y
    folds = kfold_partition(X.shape[0], k, seed)
    oof = np.empty(Y.shape)
    models = []
    for idx in folds:
        rest = np.setdiff1d(np.arange(X.shape[0]), idx)
        if len(rest) < 2:
            raise FitError(f"cross-fit: only {len(rest)} samples to fit a fold-model")
        m = fit_fn(X[rest], Y[rest])
        oof[idx] = m.predict(X[idx])
        models.append(m)
    full = fit_fn(X, Y) if refit_full else None
    return oof, CrossFitBackbone(models, folds, full, "average", Y.shape[1])
