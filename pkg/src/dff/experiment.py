"""Experiment runner: data -> backbones -> cross-fitting -> fine-tuning/baselines
-> test NDR and MSE, aggregated over seeds."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import theory
from .backbone import crossfit_predict_train, fit_gbt, fit_ols, fit_random_forest, simulation_backbone
from .core import make_rng
from .datagen import BENCHMARKS, MECHANISMS, make_benchmark
from .oracle import even_allocation, ndr_from_parts, regret_batch, regret_of_decisions
from .training import TrainConfig, mse_loss, train_dff, train_nn

METHODS = ("ols", "rf_mse", "boost_mse", "boost_2fold", "nn_mse", "nn_spo", "dff",
           "sim_backbone", "dff_over_sim", "avg_alloc")
_ALLOCATION_ONLY = {"sim_backbone", "dff_over_sim", "avg_alloc"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    benchmark: str = "grid_flow"
    variant: int = 1
    mechanism: str = "polynomial"
    degree: int | None = None
    methods: list = field(default_factory=lambda: ["boost_2fold", "dff"])
    seeds: list = field(default_factory=lambda: list(range(10)))
    epsilon: float = 0.5
    dff_backbone: str = "boost_2fold"
    n_train: int = 100
    n_test: int = 1000
    p: int = 5
    noise: float = 0.5
    rows: int = 5
    cols: int = 5
    d: int | None = None
    instance_seed: int | None = None
    val_frac: float = 0.2
    k_folds: int = 2
    n_trees: int = 100
    max_depth: int = 2
    shrinkage: float = 0.1
    rf_subsample: float = 0.5
    hist_bins: int = 30
    train: dict = field(default_factory=dict)
    workers: int = 1
    out: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; valid: {', '.join(BENCHMARKS)}")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}; valid: {', '.join(MECHANISMS)}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {bad}; valid: {', '.join(METHODS)}")
        if not self.methods or not self.seeds:
            raise ConfigError("methods and seeds must be nonempty")
        if "dff" in self.methods and self.dff_backbone not in self.methods:
            raise ConfigError(f"dff fine-tunes {self.dff_backbone!r}, which must also be listed in methods")
        if "dff" in self.methods and self.dff_backbone in ("dff", "dff_over_sim", "avg_alloc", "nn_spo", "nn_mse"):
            raise ConfigError(f"{self.dff_backbone!r} cannot serve as the dff backbone")
        if "dff_over_sim" in self.methods and "sim_backbone" not in self.methods:
            raise ConfigError("dff_over_sim needs sim_backbone in methods")
        if not self.benchmark.startswith("allocation") and _ALLOCATION_ONLY & set(self.methods):
            raise ConfigError(f"{sorted(_ALLOCATION_ONLY & set(self.methods))} only apply to allocation benchmarks")
        if self.variant not in (1, 2):
            raise ConfigError("variant must be 1 or 2")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        unknown = set(self.train) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise ConfigError(f"unknown [train] keys {sorted(unknown)}")
        return self

    def train_config(self, seed: int, epsilon: float | None = None) -> TrainConfig:
        kw = dict(self.train)
        kw.update(seed=seed, epsilon=self.epsilon if epsilon is None else epsilon)
        return TrainConfig(**kw)

    def to_json(self) -> dict:
        return asdict(self)

    def provenance(self) -> dict:
        """Config without runtime-only fields (output path, worker count)."""
        return {k: v for k, v in self.to_json().items() if k not in ("out", "workers")}

    def hash(self) -> str:
        body = self.provenance()
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        """Accepts flat keys or TOML-style sections ``[experiment]``, ``[data]``, ``[train]``."""
        flat: dict = {}
        for key, val in data.items():
            if key == "train":
                flat["train"] = dict(val)
            elif isinstance(val, dict):
                flat.update(val)
            else:
                flat[key] = val
        names = {f.name for f in fields(cls)}
        unknown = set(flat) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**flat)
        cfg.methods = list(cfg.methods)
        cfg.seeds = [int(s) for s in cfg.seeds]
        return cfg


def load_config(path) -> ExperimentConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            return ExperimentConfig.from_mapping(tomllib.load(fh))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# report

ROW_FIELDS = [
    ("method", str), ("seed", int), ("status", str), ("ndr", float), ("mse", float),
    ("backbone", str), ("best_epoch", int), ("trust_violations", int), ("rmse_violations", int),
    ("cosine_violations", int), ("max_trust_ratio", float), ("mse_increase", float), ("mse_ceiling", float),
    ("error", str),
]


def _blank_row(method, seed):
    row = {k: None for k, _ in ROW_FIELDS}
    row.update(method=method, seed=seed, status="ok", error="")
    return row


@dataclass
class ExperimentReport:
    config: dict
    rows: list

    def aggregates(self) -> dict:
        out = {}
        for m in dict.fromkeys(r["method"] for r in self.rows):
            ok = [r for r in self.rows if r["method"] == m and r["status"] == "ok"]
            agg = {"n_ok": len(ok), "n_failed": sum(1 for r in self.rows if r["method"] == m) - len(ok)}
            for key in ("ndr", "mse"):
                vals = np.array([r[key] for r in ok if r[key] is not None and not math.isnan(r[key])])
                agg[f"{key}_mean"] = float(vals.mean()) if vals.size else None
                agg[f"{key}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else None)
            out[m] = agg
        return out

    def mean(self, method: str, key: str = "ndr") -> float:
        return self.aggregates()[method][f"{key}_mean"]

    def row(self, method: str, seed: int) -> dict:
        for r in self.rows:
            if r["method"] == method and r["seed"] == seed:
                return r
        raise KeyError((method, seed))

    def to_json(self) -> dict:
        return {"config": self.config, "rows": [_json_row(r) for r in self.rows], "aggregates": self.aggregates()}

    def dumps_json(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentReport":
        return cls(obj.get("config", {}), [_parse_row({k: ("" if v is None else v) for k, v in r.items()}) for r in obj["rows"]])

    def dumps_csv(self) -> str:
        lines = [",".join(k for k, _ in ROW_FIELDS)]
        for r in self.rows:
            lines.append(",".join(_csv_cell(r[k]) for k, _ in ROW_FIELDS))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads_csv(cls, text: str, config: dict | None = None) -> "ExperimentReport":
        reader = csv.DictReader(text.splitlines())
        return cls(config or {}, [_parse_row(r) for r in reader])

    def table(self) -> str:
        """Aligned text table: one line per method, mean +- std over seeds."""
        agg = self.aggregates()
        head = f"{'Method':<14} {'NDR':>18} {'MSE':>22} {'ok/failed':>10}"
        lines = [head, "-" * len(head)]
        for m, a in agg.items():
            ndr = "/" if a["ndr_mean"] is None else f"{100 * a['ndr_mean']:.2f}% +- {100 * a['ndr_std']:.2f}"
            mse = "/" if a["mse_mean"] is None else f"{a['mse_mean']:.3e} +- {a['mse_std']:.1e}"
            lines.append(f"{m:<14} {ndr:>18} {mse:>22} {a['n_ok']:>5}/{a['n_failed']:<4}")
        return "\n".join(lines) + "\n"


def _json_row(r):
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    s = str(v)
    return '"' + s.replace('"', '""') + '"' if any(ch in s for ch in ',"\n') else s


def _parse_row(r: dict) -> dict:
    out = {}
    for k, typ in ROW_FIELDS:
        v = r.get(k, "")
        if typ is str:
            out[k] = v if (v != "" or k in ("error", "status", "method")) else None
        elif v == "" or v is None:
            out[k] = None
        else:
            out[k] = typ(v)
    return out


# ---------------------------------------------------------------------------
# one seed


def fit_backbone(cfg: ExperimentConfig, bm, name: str, seed: int):
    """Fit backbone ``name`` on ``bm.train``; returns (train predictions, test
    predictions).  Train predictions are out-of-fold for ``boost_2fold``."""
    tr, te = bm.train, bm.test
    if name == "boost_2fold":
        oof, cf = crossfit_predict_train(
            tr.X, tr.C, cfg.k_folds,
            lambda X, Y: fit_gbt(X, Y, cfg.n_trees, cfg.max_depth, cfg.shrinkage), seed)
        return oof, cf.predict(te.X)
    if name == "boost_mse":
        m = fit_gbt(tr.X, tr.C, cfg.n_trees, cfg.max_depth, cfg.shrinkage)
    elif name == "rf_mse":
        m = fit_random_forest(tr.X, tr.C, cfg.n_trees, cfg.max_depth, cfg.rf_subsample, seed)
    elif name == "ols":
        m = fit_ols(tr.X, tr.C, intercept=True)
    elif name == "sim_backbone":
        m = simulation_backbone(bm.scenario.sim)
    else:
        raise ConfigError(f"{name} is not a backbone")
    return m.predict(tr.X), m.predict(te.X)


def make_benchmark_for(cfg: ExperimentConfig, seed: int):
    return make_benchmark(cfg.benchmark, seed, cfg.variant, cfg.mechanism, cfg.n_train, cfg.n_test,
                          cfg.p, cfg.noise, cfg.rows, cfg.cols, cfg.d, cfg.instance_seed, cfg.degree)


def val_split(n: int, frac: float, seed: int):
    n_val = max(1, int(np.floor(n * frac)))
    perm = make_rng(seed, "dff-val").permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def run_seed(cfg: ExperimentConfig, seed: int, epsilons=None) -> dict:
    """Run every method for one seed.  Returns rows plus test predictions for
    distribution diagnostics and per-sample bound reports for fine-tuned rows.

    With ``epsilons`` set, only the fine-tuning method is rerun at each value
    (the backbone is fit once) and rows are tagged with ``eps``.
    """
    bm = make_benchmark_for(cfg, seed)
    oracle, tr, te = bm.oracle, bm.train, bm.test
    W_star_te = oracle.argmin_batch(oracle.sense * te.C)
    fit_idx, val_idx = val_split(tr.n, cfg.val_frac, seed)
    cache: dict = {}

    def backbone(name):
        """(train predictions, test predictions) for a backbone method."""
        if name in cache:
            if isinstance(cache[name], Exception):
                raise RuntimeError(f"backbone {name} failed: {cache[name]}")
            return cache[name]
        try:
            res = fit_backbone(cfg, bm, name, seed)
        except Exception as exc:
            cache[name] = exc
            raise
        cache[name] = res
        return res

    def evaluate(row, pred):
        dr, f_star = regret_batch(oracle, te.C, pred, W_star_te)
        row["ndr"] = ndr_from_parts(dr, f_star)
        row["mse"] = mse_loss(pred, te.C)

    def finetune(row, bb, eps):
        Chat_tr, Chat_te = backbone(bb)
        net, rep = train_dff(tr.X[fit_idx], Chat_tr[fit_idx], tr.C[fit_idx],
                             tr.X[val_idx], Chat_tr[val_idx], tr.C[val_idx],
                             oracle, cfg.train_config(seed, eps))
        pred = net(te.X, Chat_te)
        evaluate(row, pred)
        br = theory.bound_report(pred, Chat_te, te.C, eps)
        row.update(backbone=bb, best_epoch=rep.best_epoch, **{k: br.summary()[k] for k in (
            "trust_violations", "rmse_violations", "cosine_violations", "max_trust_ratio")})
        row["mse_increase"] = row["mse"] - mse_loss(Chat_te, te.C)
        row["mse_ceiling"] = theory.mse_ceiling(Chat_te, te.C, eps)
        return pred, br

    rows, preds, bounds = [], {}, {}
    if epsilons is not None:
        method = "dff_over_sim" if "dff_over_sim" in cfg.methods else "dff"
        bb = "sim_backbone" if method == "dff_over_sim" else cfg.dff_backbone
        base = _blank_row(bb, seed)
        evaluate(base, backbone(bb)[1])
        rows.append(base)
        for eps in epsilons:
            row = _blank_row(method, seed)
            row["eps"] = float(eps)
            try:
                finetune(row, bb, float(eps))
            except Exception as exc:  # noqa: BLE001
                row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
        return {"rows": rows, "preds": preds, "truth": te.C, "bounds": bounds}

    for method in cfg.methods:
        row = _blank_row(method, seed)
        try:
            if method in ("ols", "rf_mse", "boost_mse", "boost_2fold", "sim_backbone"):
                pred = backbone(method)[1]
                evaluate(row, pred)
            elif method in ("nn_mse", "nn_spo"):
                model, rep = train_nn(tr.X[fit_idx], tr.C[fit_idx], tr.X[val_idx], tr.C[val_idx], oracle,
                                      "mse" if method == "nn_mse" else "spo+", cfg.train_config(seed))
                pred = model.predict(te.X)
                row["best_epoch"] = rep.best_epoch
                evaluate(row, pred)
            elif method in ("dff", "dff_over_sim"):
                bb = cfg.dff_backbone if method == "dff" else "sim_backbone"
                pred, br = finetune(row, bb, cfg.epsilon)
                bounds[method] = br
            elif method == "avg_alloc":
                dr, f_star = regret_of_decisions(oracle, te.C, even_allocation(oracle), W_star_te)
                row["ndr"] = ndr_from_parts(dr, f_star)
                row["mse"] = None
                pred = None
            else:  # pragma: no cover - guarded by validate()
                raise ConfigError(method)
            if pred is not None:
                preds[method] = pred
        except Exception as exc:  # noqa: BLE001
            row.update(status="failed", error=f"{type(exc).__name__}: {exc}", ndr=None, mse=None)
        rows.append(row)
    return {"rows": rows, "preds": preds, "truth": te.C, "bounds": bounds}


def _map_seeds(cfg, fn_args):
    if cfg.workers > 1 and len(fn_args) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(run_seed, *zip(*fn_args)))
    return [run_seed(*a) for a in fn_args]


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run all (method, seed) cells; write report files when ``config.out`` is set."""
    cfg = config.validate()
    results = _map_seeds(cfg, [(cfg, s) for s in cfg.seeds])
    rows = [r for res in results for r in res["rows"]]
    report = ExperimentReport(cfg.provenance(), rows)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        files = ["report.csv", "report.json"]
        (out / "report.csv").write_text(report.dumps_csv())
        (out / "report.json").write_text(report.dumps_json())
        methods = [m for m in cfg.methods if all(m in r["preds"] for r in results)]
        if methods:
            truth = np.concatenate([r["truth"] for r in results])
            pooled = {m: np.concatenate([r["preds"][m] for r in results]) for m in methods}
            dist = theory.distribution_report(pooled, truth, cfg.hist_bins, out)
            files += [f"hist_{m}.csv" for m in dist["hist"]]
            (out / "wasserstein.json").write_text(json.dumps(dist["wasserstein"], indent=1, sort_keys=True) + "\n")
            files.append("wasserstein.json")
        if any(r["bounds"] for r in results):
            _write_bounds(out / "bounds.csv", cfg.seeds, results)
            files.append("bounds.csv")
        write_manifest(out, cfg, files)
    return report


def distribution_from_run(config: ExperimentConfig) -> dict:
    """Pooled test predictions and truth per method (no files)."""
    cfg = config.validate()
    results = _map_seeds(cfg, [(cfg, s) for s in cfg.seeds])
    methods = [m for m in cfg.methods if all(m in r["preds"] for r in results)]
    truth = np.concatenate([r["truth"] for r in results])
    pooled = {m: np.concatenate([r["preds"][m] for r in results]) for m in methods}
    return {"truth": truth, "preds": pooled, "rows": [r for res in results for r in res["rows"]]}


def _write_bounds(path, seeds, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "method", "sample", "rmse_increment", "rmse_bound", "cosine", "cosine_bound"])
        for seed, res in zip(seeds, results):
            for m, br in res["bounds"].items():
                for i in range(len(br.rmse_increment)):
                    w.writerow([seed, m, i, repr(float(br.rmse_increment[i])), repr(float(br.rmse_bound[i])),
                                repr(float(br.cosine[i])), repr(br.cosine_bound)])


def write_manifest(out: Path, cfg: ExperimentConfig, files: list) -> None:
    inv = {f: hashlib.sha256((out / f).read_bytes()).hexdigest() for f in sorted(set(files))}
    manifest = {"config_hash": cfg.hash(), "seeds": list(cfg.seeds), "files": inv}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# epsilon sweep

SWEEP_FIELDS = ["epsilon", "seed", "ndr", "mse", "backbone_ndr", "backbone_mse", "mse_ceiling", "status"]


def run_sweep(config: ExperimentConfig, grid=(0.0, 0.1, 0.2, 0.3, 0.5), seeds=None, out_dir=None) -> list[dict]:
    """Fine-tune at every epsilon in ``grid`` per seed; the backbone is shared
    across epsilons.  Writes ``sweep.csv`` under ``out_dir`` if given."""
    cfg = config.validate()
    if "dff" not in cfg.methods and "dff_over_sim" not in cfg.methods:
        raise ConfigError("sweep needs dff or dff_over_sim in methods")
    seeds = list(cfg.seeds if seeds is None else seeds)
    grid = [float(e) for e in grid]
    results = _map_seeds(cfg, [(cfg, s, grid) for s in seeds])
    table = []
    for seed, res in zip(seeds, results):
        base = res["rows"][0]
        for r in res["rows"][1:]:
            table.append({
                "epsilon": r["eps"], "seed": seed, "ndr": r["ndr"], "mse": r["mse"],
                "backbone_ndr": base["ndr"], "backbone_mse": base["mse"],
                "mse_ceiling": r["mse_ceiling"], "status": r["status"],
            })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_FIELDS)
            for t in table:
                w.writerow([_csv_cell(t[k]) for k in SWEEP_FIELDS])
        write_manifest(out, cfg, ["sweep.csv"])
    return table
