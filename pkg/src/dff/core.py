"""Datasets, splitting and seeded randomness shared by every module."""
from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

#: Name of the generator family every random stream is drawn from.  Bump the
#: version if the stream derivation below ever changes.
RNG_NAME = "numpy-PCG64-SeedSequence/v1"


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


def make_rng(seed: int, *stream: str | int) -> np.random.Generator:
    """Return an independent generator for ``seed`` and a named sub-stream.

    ``make_rng(3, "features")`` and ``make_rng(3, "noise")`` never share
    state, and the mapping does not depend on Python's hash randomisation.
    """
    key = tuple(zlib.crc32(s.encode()) if isinstance(s, str) else int(s) for s in stream)
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def _frozen(a: Any, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim == 1 and ndim == 2:
        arr = arr[:, None]
    if arr.ndim != ndim:
        raise DataError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """``N`` samples of features ``X`` (N x p) paired with true costs ``C`` (N x d)."""

    X: np.ndarray
    C: np.ndarray
    provenance: Any = "external"
    seed: int = 0

    def __post_init__(self):
        X = _frozen(self.X, 2)
        C = _frozen(self.C, 2)
        if X.shape[0] != C.shape[0]:
            raise DataError(f"{X.shape[0]} feature rows but {C.shape[0]} cost rows")
        if X.shape[0] < 1:
            raise DataError("dataset must hold at least one sample")
        if not (np.isfinite(X).all() and np.isfinite(C).all()):
            raise DataError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.C.shape[1]

    def __len__(self) -> int:
        return self.n

    def samples(self):
        """Iterate ``(x, c)`` pairs."""
        return zip(self.X, self.C)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return _EmptyDataset(self.p, self.d, self.provenance, self.seed)
        return Dataset(self.X[idx], self.C[idx], self.provenance, self.seed)


class _EmptyDataset(Dataset):
    """Zero-sample dataset; only produced by splits with a zero fraction."""

    def __init__(self, p, d, provenance, seed):
        object.__setattr__(self, "X", np.empty((0, p)))
        object.__setattr__(self, "C", np.empty((0, d)))
        object.__setattr__(self, "provenance", provenance)
        object.__setattr__(self, "seed", seed)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if min(fr) < 0:
            raise ValueError(f"split fractions must be nonnegative, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)!r}")


def split_dataset(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle and partition into (train, val, test).

    Validation and test sizes are floor-rounded; the remainder goes to train.
    """
    n = dataset.n
    if n < 3:
        raise ValueError(f"need at least 3 samples to split, got {n}")
    n_val = int(np.floor(n * spec.val_frac))
    n_test = int(np.floor(n * spec.test_frac))
    if spec.val_frac > 0 and n_val == 0:
        raise ValueError(f"val_frac={spec.val_frac} leaves an empty validation set for N={n}")
    if spec.test_frac > 0 and n_test == 0:
        raise ValueError(f"test_frac={spec.test_frac} leaves an empty test set for N={n}")
    perm = make_rng(spec.seed, "split").permutation(n)
    n_train = n - n_val - n_test
    tr, va, te = perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
    return dataset.subset(np.sort(tr)), dataset.subset(np.sort(va)), dataset.subset(np.sort(te))


def kfold_partition(n: int | Dataset, k: int, seed: int) -> list[np.ndarray]:
    """Split ``range(n)`` into ``k`` disjoint, exhaustive folds (sizes differ by <= 1)."""
    if isinstance(n, Dataset):
        n = n.n
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} samples")
    perm = make_rng(seed, "kfold").permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


# ---------------------------------------------------------------------------
# CSV + sidecar serialisation


def _meta_path(path: Path) -> Path:
    name = path.name[:-4] if path.name.endswith(".csv") else path.name
    return path.with_name(name + ".meta.json")


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write ``<name>.csv`` plus ``<name>.meta.json``; floats use ``repr`` so reads are exact."""
    path = Path(path)
    header = [f"x_{j}" for j in range(dataset.p)] + [f"c_{j}" for j in range(dataset.d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, c in dataset.samples():
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in c])
    meta = {"p": dataset.p, "d": dataset.d, "provenance": dataset.provenance, "seed": int(dataset.seed), "n": dataset.n}
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    meta_file = _meta_path(path)
    meta = json.loads(meta_file.read_text()) if meta_file.exists() else {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    ccols = [i for i, h in enumerate(header) if h.startswith("c_")]
    if len(xcols) + len(ccols) != len(header) or not ccols:
        raise DataError(f"{path}: header must be x_0..x_(p-1),c_0..c_(d-1)")
    try:
        arr = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    if meta and (meta.get("p") != len(xcols) or meta.get("d") != len(ccols)):
        raise DataError(f"{path}: sidecar p/d disagree with header")
    return Dataset(arr[:, xcols], arr[:, ccols], meta.get("provenance", "external"), int(meta.get("seed", 0)))


def load_matrix_csv(path: str | Path) -> np.ndarray:
    """Read a headered numeric CSV (e.g. cost vectors or predictions) into a 2-d array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    body = rows[1:] if any(not _isnum(v) for v in rows[0]) else rows
    try:
        return np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(len(body), -1)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_matrix_csv(M: np.ndarray, path: str | Path, prefix: str = "c") -> None:
    M = np.atleast_2d(M)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}_{j}" for j in range(M.shape[1])])
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def _isnum(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


@dataclass
class Standardizer:
    """Zero-mean / unit-variance feature scaling fit on training rows."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: np.ndarray = field(default_factory=lambda: np.ones(0))

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        sd = X.std(axis=0)
        sd[sd < 1e-12] = 1.0
        return cls(X.mean(axis=0), sd)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
