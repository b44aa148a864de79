# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  Semantics must match ``dff._pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, sqrt
from libc.stdlib cimport qsort

cnp.import_array()


def dag_argmin_batch(const double[:, ::1] costs,
                     const cnp.int64_t[::1] heads,
                     const cnp.int64_t[::1] out_start,
                     const cnp.int64_t[::1] out_edges):
    """Minimum-cost source->sink paths for a batch of edge-cost rows.

    Nodes ``0..V-1`` must already be in topological order, source ``0`` and
    sink ``V-1``.  Out-edges of node ``v`` are ``out_edges[out_start[v]:out_start[v+1]]``
    in ascending edge index; ties go to the earliest edge, which yields the
    lexicographically smallest edge sequence.
    """
    cdef Py_ssize_t n = costs.shape[0], E = costs.shape[1]
    cdef Py_ssize_t V = out_start.shape[0] - 1
    cdef Py_ssize_t r, v, k, e, best_e
    cdef double best, val, obj
    W_arr = np.zeros((n, E), dtype=np.float64)
    obj_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] W = W_arr
    cdef double[::1] objs = obj_arr
    togo_arr = np.empty(V, dtype=np.float64)
    cdef double[::1] togo = togo_arr
    for r in range(n):
        togo[V - 1] = 0.0
        for v in range(V - 2, -1, -1):
            best = INFINITY
            for k in range(out_start[v], out_start[v + 1]):
                e = out_edges[k]
                val = costs[r, e] + togo[heads[e]]
                if val < best:
                    best = val
            togo[v] = best
        v = 0
        obj = 0.0
        while v != V - 1:
            best = INFINITY
            best_e = -1
            for k in range(out_start[v], out_start[v + 1]):
                e = out_edges[k]
                val = costs[r, e] + togo[heads[e]]
                if val < best:
                    best = val
                    best_e = e
            if best_e < 0:
                raise ValueError("sink unreachable")
            W[r, best_e] = 1.0
            obj = obj + costs[r, best_e]
            v = heads[best_e]
        objs[r] = obj
    return W_arr, obj_arr


def best_split(const double[:, ::1] X, const double[::1] y):
    """Exhaustive axis-aligned split search for squared error.

    Returns ``(feature, threshold, gain)``; ``feature == -1`` when no split
    separates distinct values.  Features are scanned in order, positions in
    ascending feature value, and only a strictly larger gain replaces the
    incumbent.
    """
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t j, i, best_j = -1
    cdef double total, sl, sr, gain, best_gain = -INFINITY, best_thr = 0.0, base
    cdef double[::1] ys = np.empty(n, dtype=np.float64)
    cdef double[::1] xs = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] order
    if n < 2:
        return -1, 0.0, 0.0
    Xa = np.asarray(X)
    for j in range(p):
        order = np.argsort(Xa[:, j], kind="stable").astype(np.int64)
        for i in range(n):
            ys[i] = y[order[i]]
            xs[i] = X[order[i], j]
        total = 0.0
        for i in range(n):
            total = total + ys[i]
        base = total * total / n
        sl = 0.0
        for i in range(n - 1):
            sl = sl + ys[i]
            if xs[i] == xs[i + 1]:
                continue
            sr = total - sl
            gain = sl * sl / (i + 1) + sr * sr / (n - i - 1) - base
            if gain > best_gain:
                best_gain = gain
                best_j = j
                best_thr = 0.5 * (xs[i] + xs[i + 1])
    if best_j < 0:
        return -1, 0.0, 0.0
    return int(best_j), best_thr, best_gain


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double z = (<const double*>b)[0]
    if x > z:
        return -1
    if x < z:
        return 1
    return 0


cdef void _project_simplex(double* v, double* out, double* buf, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t j
    cdef double css = 0.0, tau = 0.0, t
    for j in range(d):
        buf[j] = v[j]
    qsort(buf, d, sizeof(double), _cmp_desc)
    for j in range(d):
        css = css + buf[j]
        t = (css - 1.0) / (j + 1)
        if buf[j] - t > 0:
            tau = t
    for j in range(d):
        t = v[j] - tau
        out[j] = t if t > 0 else 0.0


def project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t d = vv.shape[0]
    out = np.empty(d, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] buf = np.empty(d, dtype=np.float64)
    _project_simplex(&vv[0], &o[0], &buf[0], d)
    return out


def pga_simplex(const double[::1] c, const double[:, ::1] Sigma, double lam,
                w0, double step, double tol, Py_ssize_t max_iter):
    """Projected gradient ascent on ``c.w - lam w'Sigma w`` over the simplex.

    Returns ``(w, iterations, gradient_mapping_norm)``.
    """
    cdef Py_ssize_t d = c.shape[0], i, j, it = 0
    w_arr = np.array(w0, dtype=np.float64, copy=True)
    cdef double[::1] w = w_arr
    cdef double[::1] v = np.empty(d, dtype=np.float64)
    cdef double[::1] wn = np.empty(d, dtype=np.float64)
    cdef double[::1] buf = np.empty(d, dtype=np.float64)
    cdef double s, gm = INFINITY, diff
    while it < max_iter:
        for i in range(d):
            s = 0.0
            for j in range(d):
                s = s + Sigma[i, j] * w[j]
            v[i] = w[i] + step * (c[i] - 2.0 * lam * s)
        _project_simplex(&v[0], &wn[0], &buf[0], d)
        s = 0.0
        for i in range(d):
            diff = wn[i] - w[i]
            s = s + diff * diff
            w[i] = wn[i]
        gm = sqrt(s) / step
        it += 1
        if gm <= tol:
            break
    return w_arr, it, gm
