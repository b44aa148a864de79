"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and the same tie-breaking; ``dag_argmin_batch`` and
``best_split`` are bit-identical to the compiled versions.
"""
from __future__ import annotations

import numpy as np


def _out_table(out_start, out_edges):
    V = len(out_start) - 1
    deg = np.diff(out_start)
    table = np.full((V, max(int(deg.max(initial=0)), 1)), -1, dtype=np.int64)
    for v in range(V):
        table[v, : deg[v]] = out_edges[out_start[v]:out_start[v + 1]]
    return table


def dag_argmin_batch(costs, heads, out_start, out_edges):
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    heads = np.asarray(heads, dtype=np.int64)
    n, E = costs.shape
    V = len(out_start) - 1
    table = _out_table(np.asarray(out_start), np.asarray(out_edges))
    valid = table >= 0
    safe = np.where(valid, table, 0)
    togo = np.empty((n, V))
    togo[:, V - 1] = 0.0
    for v in range(V - 2, -1, -1):
        best = np.full(n, np.inf)
        for k in range(table.shape[1]):
            if not valid[v, k]:
                continue
            e = safe[v, k]
            val = costs[:, e] + togo[:, heads[e]]
            best = np.where(val < best, val, best)
        togo[:, v] = best
    W = np.zeros((n, E))
    obj = np.zeros(n)
    rows = np.arange(n)
    cur = np.zeros(n, dtype=np.int64)
    active = cur != V - 1
    while active.any():
        r = rows[active]
        cand = safe[cur[r]]
        vals = costs[r[:, None], cand] + togo[r[:, None], heads[cand]]
        vals = np.where(valid[cur[r]], vals, np.inf)
        k = np.argmin(vals, axis=1)
        if not np.isfinite(vals[np.arange(len(r)), k]).all():
            raise ValueError("sink unreachable")
        e = cand[np.arange(len(r)), k]
        W[r, e] = 1.0
        obj[r] = obj[r] + costs[r, e]
        cur[r] = heads[e]
        active = cur != V - 1
    return W, obj


def best_split(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    if n < 2:
        return -1, 0.0, 0.0
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    total = csum[-1]
    base = total * total / n
    sl = csum[:-1]
    sr = total - sl
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    gain = sl * sl / nl + sr * sr / (n - nl) - base
    gain = np.where(xs[:-1] == xs[1:], -np.inf, gain)
    flat = gain.T.ravel()  # feature-major scan order
    k = int(np.argmax(flat))
    if not np.isfinite(flat[k]):
        return -1, 0.0, 0.0
    j, i = divmod(k, n - 1)
    return j, 0.5 * (xs[i, j] + xs[i + 1, j]), float(flat[k])


def project_simplex(v):
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    t = (css - 1.0) / np.arange(1, len(v) + 1)
    tau = t[np.nonzero(u - t > 0)[0][-1]]
    return np.maximum(v - tau, 0.0)


def pga_simplex(c, Sigma, lam, w0, step, tol, max_iter):
    c = np.asarray(c, dtype=np.float64)
    w = np.array(w0, dtype=np.float64, copy=True)
    gm = np.inf
    it = 0
    while it < max_iter:
        wn = project_simplex(w + step * (c - 2.0 * lam * (Sigma @ w)))
        gm = float(np.linalg.norm(wn - w)) / step
        w = wn
        it += 1
        if gm <= tol:
            break
    return w, it, gm
