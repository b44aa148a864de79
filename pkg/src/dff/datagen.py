"""Seeded synthetic benchmarks: feature->cost mechanisms, portfolio risk models,
and a bimodal city-allocation market with a miscalibrated simulator.

The cost mechanisms are designed here (three families, two coefficient
presets each); they are not reproductions of any published generator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import SimulationParams
from .core import Dataset, make_rng
from .oracle import AllocationInstance, GridGraph, Oracle, PortfolioInstance

MECHANISMS = ("polynomial", "periodic", "piecewise")

# (degree) for polynomial; (sin amplitude, sin frequency, quadratic weight) for periodic;
# (slope above 0, extra slope above knot, knot) for piecewise
_PRESETS = {
    ("polynomial", 1): {"degree": 2},
    ("polynomial", 2): {"degree": 4},
    ("periodic", 1): {"amp": 1.0, "freq": 1.0, "quad": 0.5},
    ("periodic", 2): {"amp": 0.5, "freq": 2.0, "quad": 0.5},
    ("piecewise", 1): {"slope": 1.0, "kink": 3.0, "knot": 1.0},
    ("piecewise", 2): {"slope": 2.0, "kink": 6.0, "knot": 0.5},
}


@dataclass(frozen=True)
class GeneratorSpec:
    mechanism: str = "polynomial"
    p: int = 5
    d: int = 40
    n_train: int = 100
    n_test: int = 1000
    degree: int | None = None
    noise: float = 0.5
    mixing_seed: int = 0
    variant: int = 1

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; expected one of {MECHANISMS}")
        if self.variant not in (1, 2):
            raise ValueError("variant must be 1 or 2")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise half-width must lie in [0, 1)")
        if self.p < 1 or self.d < 1:
            raise ValueError("p and d must be positive")

    @property
    def params(self) -> dict:
        out = dict(_PRESETS[(self.mechanism, self.variant)])
        if self.mechanism == "polynomial" and self.degree is not None:
            out["degree"] = int(self.degree)
        return out

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def gen_features(n: int, p: int, seed: int) -> np.ndarray:
    return make_rng(seed, "features").standard_normal((n, p))


def mixing_matrix(d: int, p: int, seed: int) -> np.ndarray:
    return make_rng(seed, "mixing").binomial(1, 0.5, size=(d, p)).astype(np.float64)


def base_costs(spec: GeneratorSpec, X) -> np.ndarray:
    """Noise-free cost surface.  Values are >= 1 for every preset (odd
    polynomial degrees go below 1 when z < -3)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B = mixing_matrix(spec.d, spec.p, spec.mixing_seed)
    z = X @ B.T / np.sqrt(spec.p)
    k = spec.params
    if spec.mechanism == "polynomial":
        return (z + 3.0) ** k["degree"] + 1.0
    if spec.mechanism == "periodic":
        return k["amp"] * np.sin(k["freq"] * z) + k["quad"] * z * z + 3.0
    return 2.0 + k["slope"] * np.maximum(z, 0.0) + k["kink"] * np.maximum(z - k["knot"], 0.0)


def gen_costs(spec: GeneratorSpec, X, seed: int = 0) -> np.ndarray:
    """Costs ``base(z) * eta`` with ``eta ~ U[1 - noise, 1 + noise]`` drawn from ``seed``."""
    base = base_costs(spec, X)
    eta = make_rng(seed, "cost-noise").uniform(1.0 - spec.noise, 1.0 + spec.noise, size=base.shape)
    return base * eta


def gen_dataset(spec: GeneratorSpec, seed: int) -> tuple[Dataset, Dataset]:
    n = spec.n_train + spec.n_test
    X = gen_features(n, spec.p, seed)
    C = gen_costs(spec, X, seed)
    prov = spec.to_json()
    return (Dataset(X[:spec.n_train], C[:spec.n_train], prov, seed),
            Dataset(X[spec.n_train:], C[spec.n_train:], prov, seed))


def gen_portfolio_instance(d: int = 10, n_factors: int = 4, seed: int = 0) -> PortfolioInstance:
    """Factor-model covariance ``F F' + diag(s^2)``; risk budget = equal-weight risk."""
    rng = make_rng(seed, "portfolio")
    F = rng.normal(0.0, 0.25, size=(d, n_factors))
    idio = rng.uniform(0.05, 0.2, size=d) ** 2
    Sigma = F @ F.T + np.diag(idio)
    w = np.full(d, 1.0 / d)
    return PortfolioInstance(Sigma, float(w @ Sigma @ w))


# ---------------------------------------------------------------------------
# city subsidy allocation

MODE_MEANS = (0.25, 0.65)
MODE_SPREAD = 0.07
RATE_CLIP = (0.01, 0.99)


@dataclass
class AllocationScenario:
    """A market of ``K`` cities.

    True conversion rates are ``clip(mode_j + spread * (1.2 xi_j(x) + 0.5 noise))``
    with ``xi_j`` a bounded response to the city's subsidy signal.  ``sim``
    holds the coefficients of a deliberately miscalibrated fixed-point
    simulator of the same market.
    """

    instance: AllocationInstance
    p: int
    mixing: np.ndarray
    modes: np.ndarray
    slopes: np.ndarray
    variant: int
    sim: SimulationParams = field(repr=False, default=None)

    @property
    def K(self) -> int:
        return self.instance.d

    def signal(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.mixing.T / np.sqrt(self.p)

    def response(self, X) -> np.ndarray:
        s = self.slopes * self.signal(X)
        return np.tanh(s) if self.variant == 1 else np.sin(2.0 * s)

    def mean_rates(self, X) -> np.ndarray:
        return np.clip(self.modes + MODE_SPREAD * 1.2 * self.response(X), *RATE_CLIP)

    def rates(self, X, seed: int) -> np.ndarray:
        X = np.atleast_2d(X)
        nu = make_rng(seed, "rate-noise").standard_normal((X.shape[0], self.K))
        return np.clip(self.modes + MODE_SPREAD * (1.2 * self.response(X) + 0.5 * nu), *RATE_CLIP)


def gen_allocation_scenario(K: int = 20, seed: int = 0, p: int = 5, variant: int = 1) -> AllocationScenario:
    """Cities fall in a low (0.25) or high (0.65) conversion mode; caps are
    U[0.5, 1.5] and the budget covers half the total cap."""
    rng = make_rng(seed, "allocation")
    caps = rng.uniform(0.5, 1.5, size=K)
    instance = AllocationInstance(caps, 0.5 * caps.sum())
    modes = np.where(rng.random(K) < 0.35, MODE_MEANS[1], MODE_MEANS[0])
    mixing = rng.binomial(1, 0.5, size=(K, p)).astype(np.float64)
    slopes = rng.uniform(0.5, 1.5, size=K)
    # simulator: right structure, biased level and slope per city
    level_bias = rng.uniform(-0.3, 0.3, size=K)
    slope_bias = rng.uniform(-0.5, 0.5, size=K)
    b = rng.uniform(-1.0, 1.0, size=K)
    z0 = np.clip(modes * (1.0 + level_bias), 0.02, 0.98)
    c0 = np.log(z0 / (1.0 - z0)) - b * z0
    ds = z0 * (1.0 - z0)
    target_slope = MODE_SPREAD * 1.2 * slopes * (1.0 + slope_bias) * (1.0 if variant == 1 else 2.0)
    a = target_slope * (1.0 - ds * b) / ds
    sim = SimulationParams(mixing.copy(), a, b, c0)
    return AllocationScenario(instance, p, mixing, modes, slopes, variant, sim)


def gen_allocation_dataset(scenario: AllocationScenario, n_train: int, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    X = gen_features(n_train + n_test, scenario.p, seed)
    C = scenario.rates(X, seed)
    prov = {"benchmark": "allocation", "K": scenario.K, "variant": scenario.variant}
    return Dataset(X[:n_train], C[:n_train], prov, seed), Dataset(X[n_train:], C[n_train:], prov, seed)


# ---------------------------------------------------------------------------
# benchmark assembly

BENCHMARKS = ("grid_flow", "portfolio", "allocation", "allocation_sim")


@dataclass
class Benchmark:
    name: str
    oracle: Oracle
    train: Dataset
    test: Dataset
    scenario: AllocationScenario | None = None


def make_benchmark(name: str, seed: int, variant: int = 1, mechanism: str = "polynomial",
                   n_train: int = 100, n_test: int = 1000, p: int = 5, noise: float = 0.5,
                   rows: int = 5, cols: int = 5, d: int | None = None, instance_seed: int | None = None,
                   degree: int | None = None) -> Benchmark:
    """Oracle plus train/test data for one seed.  ``instance_seed`` fixes the
    problem instance (mixing matrix, covariance, city market) across seeds; by
    default it follows ``seed``."""
    iseed = seed if instance_seed is None else instance_seed
    if name == "grid_flow":
        oracle = GridGraph(rows, cols)
        spec = GeneratorSpec(mechanism, p, oracle.d, n_train, n_test, degree, noise, iseed, variant)
        tr, te = gen_dataset(spec, seed)
        return Benchmark(name, oracle, tr, te)
    if name == "portfolio":
        d = d or 10
        oracle = gen_portfolio_instance(d, 4, iseed)
        spec = GeneratorSpec(mechanism, p, d, n_train, n_test, degree, noise, iseed, variant)
        tr, te = gen_dataset(spec, seed)
        return Benchmark(name, oracle, tr, te)
    if name in ("allocation", "allocation_sim"):
        sc = gen_allocation_scenario(d or 20, iseed, p, variant)
        tr, te = gen_allocation_dataset(sc, n_train, n_test, seed)
        return Benchmark(name, sc.instance, tr, te, sc)
    raise ValueError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")
