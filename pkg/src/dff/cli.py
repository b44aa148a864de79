"""Command-line entry point.

Every subcommand reads an optional TOML config (``--config``) and then applies
flag overrides; flags win.  Exit codes: 0 ok, 1 usage, 2 data, 3 solver.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import DataError, save_dataset, load_dataset, load_matrix_csv, save_matrix_csv
from .experiment import (
    ConfigError, ExperimentConfig, ExperimentReport, fit_backbone, load_config,
    make_benchmark_for, run_experiment, run_sweep, val_split, write_manifest,
)
from .oracle import SolverError, load_instance, ndr_from_parts, regret_batch, save_instance
from .training import TrainingError, mse_loss, train_dff

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seeds(text: str) -> list[int]:
    """``"10"`` means seeds 0..9; ``"3,7"`` is an explicit list."""
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seeds {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("seed count must be >= 1")
    return list(range(n))


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--benchmark")
    p.add_argument("--variant", type=int)
    p.add_argument("--mechanism")
    p.add_argument("--degree", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--methods", type=lambda s: [m.strip() for m in s.split(",") if m.strip()])
    p.add_argument("--seeds", type=_seeds, help="count N (seeds 0..N-1) or comma list")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--dff-backbone", dest="dff_backbone")
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--instance-seed", dest="instance_seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


_TRAIN_FLAGS = ("lr", "max_epochs", "patience")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for key in ("benchmark", "variant", "mechanism", "degree", "noise", "methods", "seeds", "epsilon", "dff_backbone",
                "n_train", "n_test", "rows", "cols", "d", "instance_seed", "workers", "out"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    for key in _TRAIN_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            cfg.train[key] = val
    return cfg.validate()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# subcommands


def cmd_datagen(args) -> int:
    cfg = _config(args)
    if not cfg.out:
        raise UsageError("datagen needs --out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    bm = make_benchmark_for(cfg, seed)
    save_dataset(bm.train, out / "train.csv")
    save_dataset(bm.test, out / "test.csv")
    save_instance(bm.oracle, out / "instance.json")
    write_manifest(out, cfg, ["train.csv", "train.meta.json", "test.csv", "test.meta.json", "instance.json"])
    print(f"wrote {bm.train.n} train / {bm.test.n} test samples (seed {seed}) to {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    oracle = load_instance(args.instance)
    with open(args.costs) as fh:
        header = fh.readline()
    # a dataset file: keep only its cost columns
    C = load_dataset(args.costs).C if header.startswith("x_") else load_matrix_csv(args.costs)
    out = []
    for c in C:
        sol = oracle.solve(c)
        out.append({"w": sol.w.tolist(), "objective": sol.objective, "optimal": sol.optimal,
                    "diagnostics": sol.solver_diagnostics})
    print(json.dumps(_jsonable(out), indent=1))
    return EXIT_OK


def cmd_train(args) -> int:
    """Fit the backbone and the correction layer for one seed and save both
    the checkpoint and the test predictions."""
    cfg = _config(args)
    if not cfg.out:
        raise UsageError("train needs --out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    bb = "sim_backbone" if "dff_over_sim" in cfg.methods else cfg.dff_backbone
    bm = make_benchmark_for(cfg, seed)
    tr, te = bm.train, bm.test
    Chat_tr, Chat_te = fit_backbone(cfg, bm, bb, seed)
    fit_idx, val_idx = val_split(tr.n, cfg.val_frac, seed)
    net, rep = train_dff(tr.X[fit_idx], Chat_tr[fit_idx], tr.C[fit_idx],
                         tr.X[val_idx], Chat_tr[val_idx], tr.C[val_idx], bm.oracle, cfg.train_config(seed))
    net.save(out / "correction.json")
    rep.wall_time = 0.0  # keep outputs byte-stable
    rep.save(out / "train_report.json")
    save_matrix_csv(Chat_te, out / "backbone_pred.csv")
    save_matrix_csv(net(te.X, Chat_te), out / "dff_pred.csv")
    save_dataset(te, out / "test.csv")
    save_instance(bm.oracle, out / "instance.json")
    write_manifest(out, cfg, ["correction.json", "train_report.json", "backbone_pred.csv", "dff_pred.csv",
                              "test.csv", "test.meta.json", "instance.json"])
    print(f"best epoch {rep.best_epoch} of {rep.epochs_run}; val NDR {rep.val_ndr[0]:.6f} -> "
          f"{rep.val_ndr[rep.best_epoch]:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    oracle = load_instance(args.instance)
    data = load_dataset(args.data)
    pred = load_matrix_csv(args.pred)
    if pred.shape != data.C.shape:
        raise DataError(f"predictions have shape {pred.shape}, truth has {data.C.shape}")
    dr, f_star = regret_batch(oracle, data.C, pred)
    print(json.dumps({"n": data.n, "ndr": ndr_from_parts(dr, f_star), "mse": mse_loss(pred, data.C)}))
    return EXIT_OK


def cmd_bench(args) -> int:
    report = run_experiment(_config(args))
    sys.stdout.write(report.table())
    failed = [r for r in report.rows if r["status"] != "ok"]
    for r in failed:
        print(f"failed: {r['method']} seed {r['seed']}: {r['error']}", file=sys.stderr)
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    table = run_sweep(cfg, args.grid, out_dir=cfg.out)
    print("epsilon,mean_ndr,mean_mse,backbone_ndr,max_mse_increase_minus_ceiling")
    for eps in args.grid:
        rows = [t for t in table if t["epsilon"] == eps and t["status"] == "ok"]
        if not rows:
            continue
        slack = max(t["mse"] - t["backbone_mse"] - t["mse_ceiling"] for t in rows)
        means = [float(np.mean([t[k] for t in rows])) for k in ("ndr", "mse", "backbone_ndr")]
        print(",".join(repr(float(v)) for v in (eps, *means, slack)))
    return EXIT_SOLVER if any(t["status"] != "ok" for t in table) else EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.input)
    if path.is_dir():
        path = path / "report.json"
    text = path.read_text()
    if path.suffix == ".json":
        try:
            report = ExperimentReport.from_json(json.loads(text))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{path}: not a report ({exc})") from None
    else:
        report = ExperimentReport.loads_csv(text)
    if args.format == "json":
        sys.stdout.write(report.dumps_json())
    elif args.format == "csv":
        sys.stdout.write(report.dumps_csv())
    else:
        sys.stdout.write(report.table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dff", description="Decision-focused fine-tuning experiments")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("datagen", help="write one seed's train/test data and instance")
    _experiment_flags(p)
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("solve", help="solve an instance for each cost row of a CSV")
    p.add_argument("--instance", required=True)
    p.add_argument("--costs", required=True)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("train", help="fit backbone + correction layer for one seed")
    _experiment_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="NDR and MSE of a prediction CSV")
    p.add_argument("--instance", required=True)
    p.add_argument("--data", required=True, help="dataset CSV holding the true costs")
    p.add_argument("--pred", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="run all methods over all seeds")
    _experiment_flags(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sweep-eps", help="fine-tune across a grid of trust-region widths")
    _experiment_flags(p)
    p.add_argument("--grid", type=_floats, default=[0.0, 0.1, 0.2, 0.3, 0.5])
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="render a stored report")
    p.add_argument("input", help="report.json, report.csv or a run directory")
    p.add_argument("--format", choices=("json", "csv", "table"), default="table")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, TrainingError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:  # malformed instance or dataset contents
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:  # e.g. piped into head
        sys.stderr.close()
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
