"""Losses, the SPO+ subgradient, Adam, and the fine-tuning / baseline training loops."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Standardizer, make_rng
from .correction import MLP, CorrectionConfig, CorrectionNet, init_correction
from .oracle import Oracle, ndr_from_parts, regret_batch


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    return float(np.mean((pred - truth) ** 2))


def rmse(pred, truth) -> float:
    return float(np.sqrt(mse_loss(pred, truth)))


def spo_plus_batch(oracle: Oracle, C_tilde, C, W_star=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample SPO+ losses and their subgradients w.r.t. ``C_tilde``.

    In the canonical minimisation form (``q = sense * c``)::

        loss = max_w (q - 2 q_tilde).w + 2 q_tilde.w*(q) - q.w*(q)
        grad = 2 (w*(q) - w*(2 q_tilde - q))

    and the gradient is mapped back through the sign flip.  The loss is a
    convex, nonnegative upper bound on decision regret and vanishes at
    ``C_tilde == C``.
    """
    C = np.atleast_2d(oracle.check_costs(C))
    C_tilde = np.atleast_2d(oracle.check_costs(C_tilde))
    s = float(oracle.sense)
    q, q_t = s * C, s * C_tilde
    if W_star is None:
        W_star = oracle.argmin_batch(q)
    W_q = oracle.argmin_batch(2.0 * q_t - q)
    loss = (
        -np.einsum("ij,ij->i", 2.0 * q_t - q, W_q)
        + 2.0 * np.einsum("ij,ij->i", q_t, W_star)
        - np.einsum("ij,ij->i", q, W_star)
    )
    grad = s * 2.0 * (W_star - W_q)
    return loss, grad


def spo_plus_loss(oracle: Oracle, c_tilde, c) -> float:
    loss, _ = spo_plus_batch(oracle, np.asarray(c_tilde)[None], np.asarray(c)[None])
    return float(loss[0])


def spo_plus_subgradient(oracle: Oracle, c_tilde, c) -> np.ndarray:
    _, g = spo_plus_batch(oracle, np.asarray(c_tilde)[None], np.asarray(c)[None])
    return g[0]


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    epsilon: float = 0.5
    hidden: tuple = (32, 32, 32)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 0:
            raise ValueError("batch_size and patience must be >= 1, max_epochs >= 0")
        self.hidden = tuple(self.hidden)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, config: TrainConfig) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state`` and returns the new parameters."""
    b1, b2 = config.beta1, config.beta2
    state.t += 1
    state.m = b1 * state.m + (1.0 - b1) * grads
    state.v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    return params - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


# ---------------------------------------------------------------------------
# reports


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_ndr: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def _batches(n: int, size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, size):
        yield perm[i:i + size]


# ---------------------------------------------------------------------------
# decision-focused fine-tuning


def train_dff(X_train, Chat_train, C_train, X_val, Chat_val, C_val, oracle: Oracle,
              config: TrainConfig | None = None) -> tuple[CorrectionNet, TrainReport]:
    """Fit the correction layer on batch-mean SPO+ of ``phi(x) * c_hat``.

    ``Chat_*`` are backbone predictions (out-of-fold for training rows).  The
    net starts as the identity; epoch 0 is that identity, and the checkpoint
    with the lowest validation NDR (ties keep the earlier epoch) is returned.
    """
    cfg = config or TrainConfig()
    X_train, X_val = np.atleast_2d(X_train), np.atleast_2d(X_val)
    Chat_train, C_train = np.atleast_2d(Chat_train), np.atleast_2d(C_train)
    Chat_val, C_val = np.atleast_2d(Chat_val), np.atleast_2d(C_val)
    if len(X_train) != len(Chat_train) or len(X_val) != len(Chat_val):
        raise ValueError("need exactly one backbone prediction per sample")
    if len(X_val) == 0:
        raise ValueError("fine-tuning needs a nonempty validation split")
    t0 = time.perf_counter()
    net = init_correction(
        X_train.shape[1], C_train.shape[1],
        CorrectionConfig(cfg.hidden, cfg.epsilon), cfg.seed, Standardizer.fit(X_train),
    )
    W_star_tr = oracle.argmin_batch(oracle.sense * C_train)
    W_star_va = oracle.argmin_batch(oracle.sense * C_val)

    def validate():
        pred = net(X_val, Chat_val)
        dr, f_star = regret_batch(oracle, C_val, pred, W_star_va)
        return ndr_from_parts(dr, f_star), mse_loss(pred, C_val)

    rep = TrainReport()
    ndr0, mse0 = validate()
    rep.train_loss.append(float(np.mean(spo_plus_batch(oracle, net(X_train, Chat_train), C_train, W_star_tr)[0])))
    rep.val_ndr.append(ndr0)
    rep.val_mse.append(mse0)
    best_theta, best_ndr, since = net.theta.copy(), ndr0, 0
    state = AdamState.zeros(net.theta.size)
    rng = make_rng(cfg.seed, "dff-batches")
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for b, idx in enumerate(_batches(len(X_train), cfg.batch_size, rng)):
            c_tilde, trace = net.forward(X_train[idx], Chat_train[idx])
            try:
                loss, g = spo_plus_batch(oracle, c_tilde, C_train[idx], W_star_tr[idx])
            except Exception as exc:
                raise TrainingError(f"oracle failure at epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(float(loss.mean()))
            grad = net.backward(trace, g / len(idx))
            net.set_theta(adam_step(state, net.theta, grad, cfg))
        ndr, mse = validate()
        rep.train_loss.append(float(np.mean(losses)))
        rep.val_ndr.append(ndr)
        rep.val_mse.append(mse)
        rep.epochs_run = epoch
        if ndr < best_ndr:
            best_theta, best_ndr, rep.best_epoch, since = net.theta.copy(), ndr, epoch, 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    net.set_theta(best_theta)
    rep.wall_time = time.perf_counter() - t0
    return net, rep


# ---------------------------------------------------------------------------
# neural-network baselines


class MLPPredictor:
    """Plain MLP ``x -> c_hat`` on standardised features."""

    def __init__(self, p: int, d: int, hidden=(32, 32, 32), seed: int = 0, scaler: Standardizer | None = None):
        self.mlp = MLP([p, *hidden, d])
        self.mlp.init_uniform(make_rng(seed, "nn-init"), zero_output=False)
        self.scaler = scaler
        self.d = d

    def _x(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.scaler.transform(X) if self.scaler is not None else X

    def predict(self, X) -> np.ndarray:
        return self.mlp.forward(self._x(X))[0]


def train_nn(X_train, C_train, X_val, C_val, oracle: Oracle, loss_kind: str = "mse",
             config: TrainConfig | None = None) -> tuple[MLPPredictor, TrainReport]:
    """End-to-end MLP trained on MSE or SPO+; early stops on validation NDR
    (or MSE when ``loss_kind == "mse"`` and no validation rows are given)."""
    if loss_kind not in ("mse", "spo+"):
        raise ValueError(f"loss_kind must be 'mse' or 'spo+', got {loss_kind!r}")
    cfg = config or TrainConfig()
    X_train, C_train = np.atleast_2d(X_train), np.atleast_2d(C_train)
    t0 = time.perf_counter()
    model = MLPPredictor(X_train.shape[1], C_train.shape[1], cfg.hidden, cfg.seed, Standardizer.fit(X_train))
    W_star_tr = oracle.argmin_batch(oracle.sense * C_train) if loss_kind == "spo+" else None
    has_val = X_val is not None and len(X_val) > 0
    W_star_va = oracle.argmin_batch(oracle.sense * np.atleast_2d(C_val)) if has_val else None

    def validate():
        if not has_val:
            return float("nan"), float("nan")
        pred = model.predict(X_val)
        dr, f_star = regret_batch(oracle, C_val, pred, W_star_va)
        return ndr_from_parts(dr, f_star), mse_loss(pred, C_val)

    def score(ndr, mse):
        return mse if loss_kind == "mse" else ndr

    rep = TrainReport()
    ndr, mse = validate()
    rep.val_ndr.append(ndr)
    rep.val_mse.append(mse)
    rep.train_loss.append(float("nan"))
    best_theta, best, since = model.mlp.theta.copy(), score(ndr, mse), 0
    state = AdamState.zeros(model.mlp.theta.size)
    rng = make_rng(cfg.seed, "nn-batches")
    Xs = model._x(X_train)
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for b, idx in enumerate(_batches(len(X_train), cfg.batch_size, rng)):
            out, cache = model.mlp.forward(Xs[idx])
            if loss_kind == "mse":
                diff = out - C_train[idx]
                losses.append(float(np.mean(diff ** 2)))
                g = 2.0 * diff / diff.size
            else:
                try:
                    loss, g = spo_plus_batch(oracle, out, C_train[idx], W_star_tr[idx])
                except Exception as exc:
                    raise TrainingError(f"oracle failure at epoch {epoch}, batch {b}: {exc}") from exc
                losses.append(float(loss.mean()))
                g = g / len(idx)
            grad = model.mlp.backward(cache, g)
            model.mlp.theta[...] = adam_step(state, model.mlp.theta, grad, cfg)
        ndr, mse = validate()
        rep.train_loss.append(float(np.mean(losses)))
        rep.val_ndr.append(ndr)
        rep.val_mse.append(mse)
        rep.epochs_run = epoch
        if not has_val:
            continue
        cur = score(ndr, mse)
        if cur < best:
            best_theta, best, rep.best_epoch, since = model.mlp.theta.copy(), cur, epoch, 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    if has_val:
        model.mlp.theta[...] = best_theta
    else:
        rep.best_epoch = rep.epochs_run
    rep.wall_time = time.perf_counter() - t0
    return model, rep
