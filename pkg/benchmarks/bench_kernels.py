"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from dff import kernels
from dff.oracle import GridGraph


def cases():
    rng = np.random.default_rng(0)
    g = GridGraph(5, 5)
    Q = rng.uniform(0.5, 2.0, size=(1000, g.d))
    X, y = rng.standard_normal((500, 5)), rng.standard_normal(500)
    v = rng.standard_normal(50)
    F = rng.normal(0, 0.25, (10, 4))
    S = F @ F.T + np.diag(rng.uniform(0.05, 0.2, 10) ** 2)
    c = rng.uniform(0, 1, 10)
    step = 1.0 / (2.0 * 1.0 * np.linalg.eigvalsh(S).max() * 1.01 + 1.0)
    return {
        "dag_argmin_batch (1000 x 40 edges)": lambda m: m.dag_argmin_batch(Q, g.heads, g.out_start, g.out_edges),
        "best_split (500 x 5)": lambda m: m.best_split(X, y),
        "project_simplex (d=50)": lambda m: m.project_simplex(v),
        "pga_simplex (d=10)": lambda m: m.pga_simplex(c, S, 1.0, np.full(10, 0.1), step, 1e-8, 10000),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = {"python": kernels.python}
    if kernels.compiled is not None:
        impls["cython"] = kernels.compiled
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<36}" + "".join(f"{k:>14}" for k in impls) + ("   speedup" if len(impls) > 1 else ""))
    for name, fn in cases().items():
        times = {}
        for k, m in impls.items():
            n = 5
            times[k] = min(timeit.repeat(lambda: fn(m), number=n, repeat=args.repeat)) / n
        line = f"{name:<36}" + "".join(f"{1e3 * t:>12.3f}ms" for t in times.values())
        if len(times) > 1:
            line += f"   {times['python'] / times['cython']:>6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
