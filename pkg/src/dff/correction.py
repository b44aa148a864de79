"""Trust-region bias-correction layer ``c_tilde = phi(x) * c_hat + b(x)``.

``phi(x) = (1 - eps) + 2 eps sigmoid(h(x))`` with ``h`` a ReLU MLP, so every
coordinate of ``c_tilde`` stays within ``eps * |c_hat|`` of the backbone.
Forward and backward passes are written out by hand; the backbone output
``c_hat`` is treated as a constant.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Standardizer, make_rng

# Pre-activations are clipped here before the sigmoid. tanh(10) = 1 - 4e-9, so
# phi stays strictly inside (1 - eps, 1 + eps) for all but tiny eps; those
# are handled by _into_band.
H_CLIP = 20.0


class StaleTraceError(RuntimeError):
    pass


def _into_band(c_tilde, c_hat, eps):
    """Rounding of ``1 + eps*t`` can overshoot the band by an ulp when ``eps`` is
    tiny; step such coordinates back toward ``c_hat`` until the check holds."""
    for _ in range(8):
        out = np.abs(c_tilde - c_hat) > eps * np.abs(c_hat)
        if not out.any():
            return c_tilde
        c_tilde = np.where(out, np.nextafter(c_tilde, c_hat), c_tilde)
    return np.where(np.abs(c_tilde - c_hat) > eps * np.abs(c_hat), c_hat, c_tilde)


@dataclass
class CorrectionConfig:
    hidden: tuple[int, ...] = (32, 32, 32)
    epsilon: float = 0.5
    bias_mode: str = "zero"  # "zero" | "learned"


class MLP:
    """ReLU multilayer perceptron with a linear output layer over one flat parameter vector."""

    def __init__(self, sizes):
        self.sizes = [int(s) for s in sizes]
        self.shapes = []
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            self.shapes += [(a, b), (b,)]
        self.theta = np.zeros(sum(int(np.prod(s)) for s in self.shapes))
        self.params = []
        off = 0
        for s in self.shapes:
            n = int(np.prod(s))
            self.params.append(self.theta[off:off + n].reshape(s))
            off += n

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def init_uniform(self, rng, zero_output: bool) -> None:
        """Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        for l in range(self.n_layers):
            lim = 1.0 / np.sqrt(self.sizes[l])
            for P in self.params[2 * l:2 * l + 2]:
                if zero_output and l == self.n_layers - 1:
                    P[...] = 0.0
                else:
                    P[...] = rng.uniform(-lim, lim, size=P.shape)

    def forward(self, X):
        a = X
        inputs, pre = [], []
        for l in range(self.n_layers):
            inputs.append(a)
            z = a @ self.params[2 * l] + self.params[2 * l + 1]
            if l == self.n_layers - 1:
                return z, (inputs, pre)
            pre.append(z)
            a = np.maximum(z, 0.0)
        raise AssertionError("unreachable")

    def backward(self, cache, dout, d_last_hidden=None) -> np.ndarray:
        """Flat gradient of ``sum(out * dout)``; ``d_last_hidden`` adds gradient
        arriving at the last hidden activation from another head."""
        inputs, pre = cache
        grads = [None] * len(self.shapes)
        dz = dout
        for l in range(self.n_layers - 1, -1, -1):
            grads[2 * l] = inputs[l].T @ dz
            grads[2 * l + 1] = dz.sum(axis=0)
            if l == 0:
                break
            da = dz @ self.params[2 * l].T
            if l == self.n_layers - 1 and d_last_hidden is not None:
                da = da + d_last_hidden
            dz = da * (pre[l - 1] > 0)
        return np.concatenate([g.ravel() for g in grads])


@dataclass
class ForwardTrace:
    cache: tuple
    h: np.ndarray
    phi: np.ndarray
    c_hat: np.ndarray
    c_tilde: np.ndarray
    version: int


class CorrectionNet:
    """``h``-network plus optional learned-bias head; ``theta`` is one flat vector."""

    def __init__(self, p: int, d: int, config: CorrectionConfig | None = None, seed: int = 0,
                 scaler: Standardizer | None = None):
        self.config = config or CorrectionConfig()
        if self.config.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.config.bias_mode not in ("zero", "learned"):
            raise ValueError(f"bias_mode must be 'zero' or 'learned', got {self.config.bias_mode!r}")
        self.p, self.d, self.seed = int(p), int(d), int(seed)
        self.scaler = scaler
        self.mlp = MLP([self.p, *self.config.hidden, self.d])
        n_h = self.mlp.theta.size
        n_b = (self.config.hidden[-1] if self.config.hidden else self.p) * self.d + self.d
        n_b = n_b if self.config.bias_mode == "learned" else 0
        self.theta = np.zeros(n_h + n_b)
        # re-point the MLP's parameter views into the shared vector
        self.mlp.theta = self.theta[:n_h]
        off = 0
        for i, s in enumerate(self.mlp.shapes):
            n = int(np.prod(s))
            self.mlp.params[i] = self.mlp.theta[off:off + n].reshape(s)
            off += n
        if n_b:
            k = n_b - self.d
            self.bias_W = self.theta[n_h:n_h + k].reshape(-1, self.d)
            self.bias_b = self.theta[n_h + k:]
        self.version = 0

    @property
    def epsilon(self) -> float:
        return self.config.epsilon

    def set_theta(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.theta.shape:
            raise ValueError(f"theta has {theta.size} entries, expected {self.theta.size}")
        self.theta[...] = theta
        self.version += 1

    def copy(self) -> "CorrectionNet":
        net = CorrectionNet(self.p, self.d, self.config, self.seed, self.scaler)
        net.theta[...] = self.theta
        return net

    def _x(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.scaler.transform(X) if self.scaler is not None else X

    def _phi_of(self, h):
        return 1.0 + self.epsilon * np.tanh(0.5 * np.clip(h, -H_CLIP, H_CLIP))

    def h(self, X) -> np.ndarray:
        return self.mlp.forward(self._x(X))[0]

    def phi(self, X) -> np.ndarray:
        return self._phi_of(self.h(X))

    def forward(self, X, C_hat) -> tuple[np.ndarray, ForwardTrace]:
        C_hat = np.atleast_2d(np.asarray(C_hat, dtype=np.float64))
        if C_hat.shape[1] != self.d:
            raise ValueError(f"c_hat has {C_hat.shape[1]} columns, expected {self.d}")
        h, cache = self.mlp.forward(self._x(X))
        phi = self._phi_of(h)
        c_tilde = _into_band(phi * C_hat, C_hat, self.epsilon)
        if self.config.bias_mode == "learned":
            last = cache[0][-1]
            c_tilde = c_tilde + last @ self.bias_W + self.bias_b
        return c_tilde, ForwardTrace(cache, h, phi, C_hat, c_tilde, self.version)

    def __call__(self, X, C_hat) -> np.ndarray:
        return self.forward(X, C_hat)[0]

    def backward(self, trace: ForwardTrace, grad_c_tilde) -> np.ndarray:
        """Gradient w.r.t. ``theta`` of ``sum(c_tilde * grad_c_tilde)``."""
        if trace.version != self.version:
            raise StaleTraceError("forward trace predates the current parameters")
        G = np.asarray(grad_c_tilde, dtype=np.float64).reshape(trace.c_tilde.shape)
        t = np.tanh(0.5 * trace.h)
        dphi_dh = np.where(np.abs(trace.h) < H_CLIP, 0.5 * self.epsilon * (1.0 - t * t), 0.0)
        dh = G * trace.c_hat * dphi_dh
        if self.config.bias_mode == "learned":
            last = trace.cache[0][-1]
            g_h = self.mlp.backward(trace.cache, dh, G @ self.bias_W.T)
            return np.concatenate([g_h, (last.T @ G).ravel(), G.sum(axis=0)])
        return self.mlp.backward(trace.cache, dh)

    # -- checkpoints ------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "architecture": {"p": self.p, "d": self.d, "hidden": list(self.config.hidden)},
            "epsilon": float(self.epsilon).hex(),
            "bias_mode": self.config.bias_mode,
            "seed": self.seed,
            "scaler": None if self.scaler is None else {
                "mean": [float(v).hex() for v in self.scaler.mean],
                "scale": [float(v).hex() for v in self.scaler.scale],
            },
            "theta": [float(v).hex() for v in self.theta],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CorrectionNet":
        arch = obj["architecture"]
        cfg = CorrectionConfig(tuple(arch["hidden"]), float.fromhex(obj["epsilon"]), obj.get("bias_mode", "zero"))
        sc = obj.get("scaler")
        scaler = None if sc is None else Standardizer(
            np.array([float.fromhex(v) for v in sc["mean"]]), np.array([float.fromhex(v) for v in sc["scale"]])
        )
        net = cls(arch["p"], arch["d"], cfg, obj.get("seed", 0), scaler)
        net.set_theta(np.array([float.fromhex(v) for v in obj["theta"]]))
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "CorrectionNet":
        return cls.from_json(json.loads(Path(path).read_text()))


def init_correction(p: int, d: int, config: CorrectionConfig | None = None, seed: int = 0,
                    scaler: Standardizer | None = None) -> CorrectionNet:
    """Hidden layers get scaled-uniform weights; the layer producing ``h`` (and the
    learned-bias head) start at zero, so a fresh net returns ``c_hat`` unchanged."""
    net = CorrectionNet(p, d, config, seed, scaler)
    net.mlp.init_uniform(make_rng(seed, "correction-init"), zero_output=True)
    net.version += 1
    return net


def phi(net: CorrectionNet, x) -> np.ndarray:
    return net.phi(x)


def forward(net: CorrectionNet, x, c_hat):
    return net.forward(x, c_hat)


def backward(net: CorrectionNet, trace: ForwardTrace, grad) -> np.ndarray:
    return net.backward(trace, grad)
