"""Acceptance criteria 1-10, one test each.

Every test prints a single ``[PASS]`` / ``[FAIL]`` line (collected into the
pytest terminal summary) and then asserts.  Run directly with
``pytest tests/test_acceptance.py -v``.
"""
import filecmp
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dff.cli import main as cli_main
from dff.correction import CorrectionConfig, CorrectionNet, init_correction
from dff.datagen import gen_portfolio_instance
from dff.experiment import ExperimentConfig, run_experiment
from dff.oracle import (
    AllocationInstance, GridGraph, PortfolioInstance, brute_force_solve, normalized_decision_regret,
)
from dff.theory import THEOREM_TOL, bound_report
from dff.training import TrainConfig, spo_plus_batch, train_dff

pytestmark = pytest.mark.acceptance


def record(n: int, title: str, ok: bool, detail: str, elapsed: float, limit: float | None = None):
    if limit is not None and elapsed >= limit:
        ok = False
        detail += f"; runtime {elapsed:.1f}s exceeds {limit:.0f}s"
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} -- {detail} ({elapsed:.1f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _random_net(rng, p, d, eps):
    hidden = tuple(int(h) for h in rng.integers(1, 9, size=int(rng.integers(1, 4))))
    net = CorrectionNet(p, d, CorrectionConfig(hidden, eps))
    # wide scale range so many draws saturate the sigmoid
    net.set_theta(rng.normal(0.0, 10.0 ** rng.uniform(-2, 2), net.theta.size))
    return net


def test_c1_trust_region_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    draws = bad = coords = 0
    for eps in (0.1, 0.5, 0.9):
        for _ in range(3400):
            p, d = int(rng.integers(1, 6)), int(rng.integers(1, 8))
            net = _random_net(rng, p, d, eps)
            x = rng.standard_normal((1, p)) * 3
            c_hat = rng.standard_normal((1, d)) * 10.0 ** rng.uniform(-3, 3)
            c_hat[rng.random((1, d)) < 0.05] = 0.0
            c_t = net(x, c_hat)
            bad += int(np.sum(np.abs(c_t - c_hat) > eps * np.abs(c_hat)))
            coords += d
            draws += 1
    record(1, "trust-region soundness", bad == 0 and draws >= 10_000,
           f"{draws} draws, {coords} coordinates, {bad} violations", time.perf_counter() - t0, 10)


def test_c2_bound_inequalities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    draws = rmse_bad = cos_bad = 0
    for eps in (0.0, 0.1, 0.3, 0.5, 0.9, 1.0):
        for _ in range(200):
            p, d = int(rng.integers(1, 6)), int(rng.integers(1, 10))
            net = _random_net(rng, p, d, eps)
            X = rng.standard_normal((10, p))
            C_hat = rng.standard_normal((10, d)) * 5
            C = C_hat + rng.standard_normal((10, d)) * 3
            br = bound_report(net(X, C_hat), C_hat, C, eps)
            rmse_bad += br.rmse_violations
            cos_bad += br.cosine_violations
            draws += 10
    record(2, "RMSE-increment and cosine bounds",
           rmse_bad == 0 and cos_bad == 0 and draws >= 10_000,
           f"{draws} draws, tol {THEOREM_TOL:g}, {rmse_bad} RMSE / {cos_bad} cosine violations",
           time.perf_counter() - t0, 10)


def _brute_regret(problem, c, c_t):
    """Regret from exhaustive enumeration, under the problem's sense."""
    best = brute_force_solve(problem, c)
    w_t = brute_force_solve(problem, c_t).w
    return float(problem.sense * (c @ w_t - best.objective))


def test_c3_spo_plus_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n = fails = 0
    worst = {"bound": 0.0, "self": 0.0, "convex": 0.0}
    for i in range(1200):
        kind = i % 3
        if kind == 0:
            prob = GridGraph(2, 2)
        elif kind == 1:
            prob = GridGraph(3, 3)
        else:
            K = int(rng.integers(2, 7))
            u = rng.uniform(0.5, 1.5, K)
            prob = AllocationInstance(u, rng.uniform(0.2, 0.9) * u.sum())
        if isinstance(prob, GridGraph) and rng.random() < 0.3:
            c = rng.integers(-2, 4, prob.d).astype(float)  # ties
        else:
            c = rng.uniform(-1, 2, prob.d)
        c_t = c + rng.normal(0, 1.0, prob.d)
        c_t2 = c + rng.normal(0, 1.0, prob.d)
        loss, grad = spo_plus_batch(prob, np.stack([c_t, c, c_t2]), np.stack([c, c, c]))
        regret = _brute_regret(prob, c, c_t)
        gap_bound = regret - loss[0]
        gap_convex = loss[0] + grad[0] @ (c_t2 - c_t) - loss[2]
        worst["bound"] = max(worst["bound"], gap_bound)
        worst["self"] = max(worst["self"], loss[1])
        worst["convex"] = max(worst["convex"], gap_convex)
        fails += (gap_bound > 1e-9) + (loss[1] > 1e-9) + (gap_convex > 1e-9)
        n += 1
    record(3, "SPO+ upper bound, zero at truth, convexity", fails == 0 and n >= 1000,
           f"{n} instances; max(regret-loss)={worst['bound']:.2e}, max loss(c,c)={worst['self']:.2e}, "
           f"max convexity gap={worst['convex']:.2e}", time.perf_counter() - t0, 60)


def _alloc_pattern(a, w):
    return np.where(w <= 1e-12, 0, np.where(w >= a.caps - 1e-12, 2, 1))


def test_c4_oracle_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    grid_bad = alloc_bad = 0
    for r in range(1, 5):
        for cols in range(1, 5):
            if r * cols < 2:
                continue
            g = GridGraph(r, cols)
            for _ in range(50):
                c = rng.integers(-3, 4, g.d).astype(float) if rng.random() < 0.5 else rng.standard_normal(g.d)
                a, b = g.solve(c), brute_force_solve(g, c)
                grid_bad += int(not (np.array_equal(a.w, b.w) and a.objective == b.objective))
    for _ in range(600):
        K = int(rng.integers(1, 7))
        u = rng.uniform(0.5, 1.5, K)
        a = AllocationInstance(u, rng.uniform(0.1, 1.2) * u.sum())
        c = rng.uniform(-0.3, 1.0, K)
        # same vertex (which cities are empty / at cap / partial) and objective to rounding
        sa, sb = a.solve(c), brute_force_solve(a, c)
        alloc_bad += int(not (np.array_equal(_alloc_pattern(a, sa.w), _alloc_pattern(a, sb.w))
                              and abs(sa.objective - sb.objective) <= 1e-12))
    port_gap = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 4))
        A = rng.standard_normal((d, d)) * 0.3
        S = A @ A.T + 0.05 * np.eye(d)
        w_eq = np.full(d, 1.0 / d)
        p = PortfolioInstance(S, float(w_eq @ S @ w_eq) * rng.uniform(1.0, 1.5))
        c = rng.uniform(0, 1, d)
        port_gap = max(port_gap, abs(p.solve(c).objective - brute_force_solve(p, c).objective))
    kkt = 0.0
    for s in range(10):
        p = gen_portfolio_instance(10, 4, seed=s)
        for c in rng.uniform(0, 2, (5, 10)):
            diag = p.solve(c).solver_diagnostics
            kkt = max(kkt, *(diag[k] for k in ("kkt_stationarity", "kkt_primal", "kkt_dual", "kkt_complementarity")))
    ok = grid_bad == 0 and alloc_bad == 0 and port_gap <= 1e-3 and kkt <= 1e-6
    record(4, "oracle exactness", ok,
           f"grid mismatches {grid_bad}, allocation mismatches {alloc_bad}, portfolio grid gap {port_gap:.2e}, "
           f"max KKT residual (d=10) {kkt:.2e}", time.perf_counter() - t0, 120)


def test_c5_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    h = 1e-5
    for k in range(100):
        p, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        hidden = tuple(int(v) for v in rng.integers(2, 5, size=int(rng.integers(1, 3))))
        bias = "learned" if k % 4 == 0 else "zero"
        net = CorrectionNet(p, d, CorrectionConfig(hidden, float(rng.uniform(0.1, 0.9)), bias))
        net.set_theta(rng.normal(0, 0.5, net.theta.size))
        X, C_hat, v = rng.standard_normal((4, p)), rng.standard_normal((4, d)), rng.standard_normal((4, d))
        _, trace = net.forward(X, C_hat)
        g = net.backward(trace, v)
        theta0 = net.theta.copy()
        g_fd = np.empty_like(g)
        for i in range(theta0.size):
            for sgn in (1, -1):
                t = theta0.copy()
                t[i] += sgn * h
                net.set_theta(t)
                val = float(np.sum(net(X, C_hat) * v))
                g_fd[i] = val if sgn == 1 else (g_fd[i] - val) / (2 * h)
        net.set_theta(theta0)
        worst = max(worst, np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-12))
    record(5, "correction backward vs central differences", worst <= 1e-4,
           f"100 nets, max relative error {worst:.2e}", time.perf_counter() - t0, 30)


def test_c6_identity_reductions():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(methods=["boost_2fold", "dff"], seeds=[0, 1, 2], epsilon=0.0, train={"max_epochs": 20})
    rep = run_experiment(cfg)
    eq = all(rep.row("dff", s)["ndr"] == rep.row("boost_2fold", s)["ndr"]
             and rep.row("dff", s)["mse"] == rep.row("boost_2fold", s)["mse"] for s in cfg.seeds)
    rng = np.random.default_rng(6)
    g = GridGraph(5, 5)
    X = rng.standard_normal((80, 5))
    C = rng.uniform(1, 3, (80, g.d))
    C_hat = C * rng.uniform(0.5, 1.5, C.shape)
    net0 = init_correction(5, g.d, CorrectionConfig(epsilon=0.5), seed=0)
    same_out = np.array_equal(net0(X, C_hat), C_hat)
    _, tr = train_dff(X[:60], C_hat[:60], C[:60], X[60:], C_hat[60:], C[60:], g, TrainConfig(max_epochs=3))
    epoch0 = tr.val_ndr[0] == normalized_decision_regret(g, C[60:], C_hat[60:])
    record(6, "identity reductions", eq and same_out and epoch0,
           f"eps=0 DFF==backbone bitwise on 3 seeds: {eq}; zero-init output is identity: {same_out}; "
           f"epoch-0 val NDR == backbone NDR: {epoch0}", time.perf_counter() - t0)


def test_c7_grid_allocation_direction():
    t0 = time.perf_counter()
    parts, ok = [], True
    for bench in ("grid_flow", "allocation"):
        for variant in (1, 2):
            rep = run_experiment(ExperimentConfig(benchmark=bench, variant=variant,
                                                  methods=["boost_2fold", "dff"], seeds=list(range(10))))
            a = rep.aggregates()
            dff_rows = [r for r in rep.rows if r["method"] == "dff"]
            ceiling = float(np.mean([r["mse_ceiling"] for r in dff_rows]))
            increase = a["dff"]["mse_mean"] - a["boost_2fold"]["mse_mean"]
            good = (a["dff"]["n_failed"] == 0 and a["dff"]["ndr_mean"] <= a["boost_2fold"]["ndr_mean"]
                    and increase <= ceiling)
            ok &= good
            parts.append(f"{bench} v{variant}: NDR {100 * a['boost_2fold']['ndr_mean']:.3f}% -> "
                         f"{100 * a['dff']['ndr_mean']:.3f}%, dMSE {increase:.3g} <= {ceiling:.3g}")
    record(7, "DFF <= 2-fold boost NDR, MSE within ceiling", ok, "; ".join(parts), time.perf_counter() - t0, 1800)


def test_c8_allocation_sim_ordering():
    t0 = time.perf_counter()
    parts, ok = [], True
    for variant in (1, 2):
        cfg = ExperimentConfig(benchmark="allocation_sim", variant=variant,
                               methods=["avg_alloc", "sim_backbone", "dff_over_sim", "nn_spo"], seeds=list(range(10)))
        from dff.experiment import distribution_from_run
        from dff.theory import wasserstein_1d

        run = distribution_from_run(cfg)
        rep_rows = run["rows"]
        mean = {m: float(np.mean([r["ndr"] for r in rep_rows if r["method"] == m])) for m in cfg.methods}
        w_dff = wasserstein_1d(run["preds"]["dff_over_sim"], run["truth"])
        w_nn = wasserstein_1d(run["preds"]["nn_spo"], run["truth"])
        good = mean["avg_alloc"] > mean["sim_backbone"] > mean["dff_over_sim"] and w_dff < w_nn
        ok &= good
        parts.append(f"v{variant}: NDR avg {100 * mean['avg_alloc']:.2f}% > sim {100 * mean['sim_backbone']:.2f}% "
                     f"> dff {100 * mean['dff_over_sim']:.2f}%, W1 dff {w_dff:.4f} < nn_spo {w_nn:.4f}")
    record(8, "allocation ordering and distribution fidelity", ok, "; ".join(parts), time.perf_counter() - t0, 900)


SWEEP_ARGS = ["sweep-eps", "--benchmark", "grid_flow", "--seeds", "10", "--grid", "0,0.1,0.2,0.3,0.5"]


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    t0 = time.perf_counter()
    code = cli_main(SWEEP_ARGS + ["--out", str(out)])
    return out, code, time.perf_counter() - t0


def test_c9_epsilon_sweep(sweep_dir, capsys):
    import csv

    out, code, elapsed = sweep_dir
    capsys.readouterr()
    rows = list(csv.DictReader((out / "sweep.csv").read_text().splitlines()))
    zero = [r for r in rows if float(r["epsilon"]) == 0.0]
    zero_ok = len(zero) == 10 and all(r["ndr"] == r["backbone_ndr"] and r["mse"] == r["backbone_mse"] for r in zero)
    slack = max(float(r["mse"]) - float(r["backbone_mse"]) - float(r["mse_ceiling"]) for r in rows)
    eps_seen = sorted({float(r["epsilon"]) for r in rows})
    ok = code == 0 and zero_ok and slack <= 0 and eps_seen == [0.0, 0.1, 0.2, 0.3, 0.5] and len(rows) == 50
    record(9, "epsilon sweep", ok,
           f"{len(rows)} rows over eps {eps_seen}; eps=0 equals backbone: {zero_ok}; "
           f"max(MSE increase - ceiling) {slack:.3g}", elapsed, 1800)


def test_c10_determinism(sweep_dir, tmp_path, capsys):
    t0 = time.perf_counter()
    out1, _, _ = sweep_dir
    out2 = tmp_path / "sweep2"
    cli_main(SWEEP_ARGS + ["--out", str(out2)])
    bench = ["bench", "--benchmark", "allocation_sim", "--methods", "avg_alloc,sim_backbone,dff_over_sim,nn_spo",
             "--seeds", "10"]
    cli_main(bench + ["--out", str(tmp_path / "b1")])
    cli_main(bench + ["--out", str(tmp_path / "b2"), "--workers", "2"])
    capsys.readouterr()
    diffs = []
    for a, b in ((out1, out2), (tmp_path / "b1", tmp_path / "b2")):
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        diffs += mismatch + errors
    record(10, "byte-identical reruns", not diffs,
           f"sweep-eps and bench (1 vs 2 workers) reruns; differing files: {diffs or 'none'}",
           time.perf_counter() - t0)
