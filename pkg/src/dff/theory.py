"""Executable checks of the fine-tuning guarantees and distribution diagnostics.

For ``c_tilde = phi * c_hat`` with ``phi`` in ``[1 - eps, 1 + eps]``:

* ``RMSE(c_tilde, c) - RMSE(c_hat, c) <= eps / sqrt(d) * ||c_hat||``
* ``cos(c_tilde, c_hat) >= sqrt(1 - eps^2)`` (``eps <= 1``)

Both are checked per sample; a single violation is a bug.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import fit_gls, fit_ols
from .oracle import Oracle, normalized_decision_regret

THEOREM_TOL = 1e-12


def rmse_increment_bound(c_hat, eps: float) -> float | np.ndarray:
    """``eps / sqrt(d) * ||c_hat||``; row-wise for 2-d input."""
    c_hat = np.asarray(c_hat, dtype=np.float64)
    return eps / np.sqrt(c_hat.shape[-1]) * np.linalg.norm(c_hat, axis=-1)


def cosine_check(c_tilde, c_hat, eps: float) -> tuple[float, float, bool]:
    if eps > 1:
        raise ValueError("the cosine bound needs eps <= 1")
    a, b = np.asarray(c_tilde, dtype=np.float64), np.asarray(c_hat, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine undefined for a zero-norm vector")
    cos = float(a @ b / (na * nb))
    bound = float(np.sqrt(1.0 - eps * eps))
    return cos, bound, cos >= bound - THEOREM_TOL


def trust_region_check(c_tilde, c_hat, eps: float) -> tuple[bool, float]:
    """``|c_tilde_i - c_hat_i| <= eps |c_hat_i|`` for every coordinate.

    Returns ``(ok, worst ratio |c_tilde_i - c_hat_i| / |c_hat_i|)``; a moved
    coordinate with ``c_hat_i == 0`` has an infinite ratio.
    """
    a, b = np.asarray(c_tilde, dtype=np.float64), np.asarray(c_hat, dtype=np.float64)
    dev = np.abs(a - b)
    ok = bool(np.all(dev <= eps * np.abs(b)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(b != 0, dev / np.abs(b), np.where(dev == 0, 0.0, np.inf))
    return ok, float(ratio.max()) if ratio.size else 0.0


def _row_rmse(A, B):
    return np.sqrt(np.mean((A - B) ** 2, axis=-1))


@dataclass
class BoundReport:
    rmse_increment: np.ndarray
    rmse_bound: np.ndarray
    cosine: np.ndarray
    cosine_bound: float
    trust_violations: int
    rmse_violations: int
    cosine_violations: int
    max_trust_ratio: float
    max_rmse_slack: float  # max of increment - bound; <= 0 when the bound holds

    @property
    def violation_count(self) -> int:
        return self.trust_violations + self.rmse_violations + self.cosine_violations

    def summary(self) -> dict:
        return {
            "trust_violations": self.trust_violations,
            "rmse_violations": self.rmse_violations,
            "cosine_violations": self.cosine_violations,
            "max_trust_ratio": self.max_trust_ratio,
            "max_rmse_slack": self.max_rmse_slack,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "rmse_increment", "rmse_bound", "cosine", "cosine_bound"])
            for i in range(len(self.rmse_increment)):
                w.writerow([i, repr(float(self.rmse_increment[i])), repr(float(self.rmse_bound[i])),
                            repr(float(self.cosine[i])), repr(self.cosine_bound)])


def bound_report(C_tilde, C_hat, C, eps: float) -> BoundReport:
    """Per-sample trust-region, RMSE-increment and cosine diagnostics."""
    Ct, Ch, C = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (C_tilde, C_hat, C))
    trust_bad = int(np.sum(np.abs(Ct - Ch) > eps * np.abs(Ch)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(Ch != 0, np.abs(Ct - Ch) / np.abs(Ch), 0.0)
    inc = _row_rmse(Ct, C) - _row_rmse(Ch, C)
    bnd = rmse_increment_bound(Ch, eps)
    rmse_bad = int(np.sum(inc > bnd + THEOREM_TOL))
    nt, nh = np.linalg.norm(Ct, axis=1), np.linalg.norm(Ch, axis=1)
    ok_rows = (nt > 0) & (nh > 0)
    cos = np.full(len(Ct), np.nan)
    cos[ok_rows] = np.einsum("ij,ij->i", Ct[ok_rows], Ch[ok_rows]) / (nt[ok_rows] * nh[ok_rows])
    if eps <= 1:
        cb = float(np.sqrt(1.0 - eps * eps))
        cos_bad = int(np.sum(cos[ok_rows] < cb - THEOREM_TOL))
    else:
        cb, cos_bad = float("nan"), 0
    return BoundReport(inc, bnd, cos, cb, trust_bad, rmse_bad, cos_bad,
                       float(ratio.max()) if ratio.size else 0.0,
                       float(np.max(inc - bnd)) if inc.size else 0.0)


def mse_ceiling(C_hat, C, eps: float) -> float:
    """Largest MSE increase compatible with the per-sample RMSE bound:
    ``mean_i (RMSE_i(c_hat) + b_i)^2 - MSE(c_hat)``, expanded so that it is
    exactly 0 when every ``b_i`` is."""
    Ch, C = np.atleast_2d(C_hat), np.atleast_2d(C)
    r = _row_rmse(Ch, C)
    b = rmse_increment_bound(Ch, eps)
    return float(np.mean(b * (2.0 * r + b)))


# ---------------------------------------------------------------------------
# least-squares bias demonstration


def gls_bias_demo(X, Y, Q, oracle: Oracle | None = None, intercept: bool = False) -> dict:
    """Fit the MSE closed form and the decision-weighted (GLS) closed form on the
    same data and report how far apart they land.

    ``Q`` is either an ``(N, d, d)`` array of PSD weights or a callable
    ``Q(X, Y) -> array``.
    """
    Qa = Q(X, Y) if callable(Q) else Q
    po = fit_ols(X, Y, intercept)
    dl = fit_gls(X, Y, Qa, intercept)
    div = dl.beta - po.beta
    out = {
        "beta_po": po.beta,
        "beta_dl": dl.beta,
        "divergence": div,
        "max_abs_divergence": float(np.abs(div).max()),
    }
    if oracle is not None:
        Y2 = np.atleast_2d(Y) if np.ndim(Y) > 1 else np.asarray(Y)[:, None]
        out["ndr_po"] = normalized_decision_regret(oracle, Y2, po.predict(X))
        out["ndr_dl"] = normalized_decision_regret(oracle, Y2, dl.predict(X))
    return out


# ---------------------------------------------------------------------------
# distribution diagnostics


def wasserstein_1d(a, b) -> float:
    """Empirical 1-Wasserstein distance between two samples of scalars."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    x = np.concatenate([a, b])
    x.sort(kind="mergesort")
    dx = np.diff(x)
    Fa = np.searchsorted(a, x[:-1], side="right") / a.size
    Fb = np.searchsorted(b, x[:-1], side="right") / b.size
    return float(np.sum(np.abs(Fa - Fb) * dx))


def distribution_report(predictions: dict, truth, bins: int = 30, out_dir=None) -> dict:
    """Fixed-bin histograms of pooled prediction values per method, plus each
    method's 1-Wasserstein distance to the pooled truth.

    Writes ``hist_<method>.csv`` (and ``hist_truth.csv``) when ``out_dir`` is given.
    """
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pooled = {m: np.asarray(v, dtype=np.float64).ravel() for m, v in predictions.items()}
    lo = min([truth.min()] + [v.min() for v in pooled.values()])
    hi = max([truth.max()] + [v.max() for v in pooled.values()])
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    out = {"edges": edges, "hist": {}, "wasserstein": {}}
    for m, v in [("truth", truth), *pooled.items()]:
        out["hist"][m] = np.histogram(v, bins=edges)[0]
        if m != "truth":
            out["wasserstein"][m] = wasserstein_1d(v, truth)
    if out_dir is not None:
        for m, counts in out["hist"].items():
            with open(Path(out_dir) / f"hist_{m}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["bin_left", "bin_right", "count"])
                for k in range(bins):
                    w.writerow([repr(float(edges[k])), repr(float(edges[k + 1])), int(counts[k])])
    return out


def epsilon_sweep(config, grid=(0.0, 0.1, 0.2, 0.3, 0.5), seeds=None, out_dir=None):
    """Fine-tune at every ``eps`` in ``grid`` for every seed; see
    :func:`dff.experiment.run_sweep`."""
    from .experiment import run_sweep

    return run_sweep(config, grid, seeds, out_dir)
