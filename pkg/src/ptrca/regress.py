"""Linear head over partial-trajectory states, fit by proximal gradient.

The objective averages the squared error over every prefix of every wafer,

    (1 / 2N) * sum_n (1 / L_n) * sum_{k=1..L_n} (y_n - f(z_k))**2 + nu * |theta|_1,

with f(z) = theta . ((z - center) / scale) + bias.  The bias is not penalised.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .route2vec import PartialStateSequence

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


@dataclass
class Model:
    theta: np.ndarray
    bias: float
    center: np.ndarray
    scale: np.ndarray
    embedding_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.center = np.asarray(self.center, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        self.bias = float(self.bias)
        if not (self.theta.shape == self.center.shape == self.scale.shape) or self.theta.ndim != 1:
            raise ValueError("theta must match center/scale in length")
        if np.any(self.scale <= 0):
            raise ValueError("feature scale entries must be positive")

    @classmethod
    def identity(cls, theta, bias=0.0, **kw) -> "Model":
        theta = np.asarray(theta, dtype=float)
        return cls(theta, bias, np.zeros_like(theta), np.ones_like(theta), **kw)

    @property
    def dim(self) -> int:
        return self.theta.size

    def folded(self) -> tuple[np.ndarray, float]:
        """(w, c) with f(z) == w . z + c."""
        w = self.theta / self.scale
        return w, self.bias - float(w @ self.center)

    def to_dict(self) -> dict:
        return {
            "theta": [float(x) for x in self.theta],
            "b": self.bias,
            "mu": [float(x) for x in self.center],
            "sigma": [float(x) for x in self.scale],
            "D": self.dim,
            "embedding_hash": self.embedding_hash,
            **self.meta,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, embedding_hash: str | None = None) -> "Model":
        d = json.loads(Path(path).read_text())
        if embedding_hash is not None and d["embedding_hash"] != embedding_hash:
            raise ValueError(f"{path}: model was trained on a different embedding "
                             f"({d['embedding_hash'][:12]} != {embedding_hash[:12]})")
        meta = {k: v for k, v in d.items() if k not in ("theta", "b", "mu", "sigma", "D", "embedding_hash")}
        model = cls(d["theta"], d["b"], d["mu"], d["sigma"], d["embedding_hash"], meta)
        if model.dim != d["D"]:
            raise ValueError(f"{path}: D does not match the weight vector length")
        return model


def predict(model: Model, z) -> float | np.ndarray:
    """Affine prediction for one state vector or a stack of them (last axis D)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.dim:
        raise ValueError(f"state has dimension {z.shape[-1]}, model expects {model.dim}")
    out = ((z - model.center) / model.scale) @ model.theta + model.bias
    return float(out) if out.ndim == 0 else out


def _check_inputs(states: Sequence[PartialStateSequence], labels) -> np.ndarray:
    if len(states) == 0:
        raise TrainingError("empty dataset")
    y = np.asarray(labels, dtype=float)
    if y.shape != (len(states),):
        raise TrainingError("one label per wafer required")
    return y


def loss(model: Model, states: Sequence[PartialStateSequence], labels, nu: float) -> float:
    y = _check_inputs(states, labels)
    total = 0.0
    for s, yn in zip(states, y):
        r = yn - predict(model, s.states[1:])
        total += float(r @ r) / s.length
    return total / (2 * len(states)) + nu * float(np.abs(model.theta).sum())


def smooth_loss_grad(model: Model, states, labels) -> tuple[float, np.ndarray, float]:
    """Squared-error part of the loss and its gradient in (theta, bias)."""
    y = _check_inputs(states, labels)
    n = len(states)
    value, g_theta, g_bias = 0.0, np.zeros(model.dim), 0.0
    for s, yn in zip(states, y):
        u = (s.states[1:] - model.center) / model.scale
        r = yn - (u @ model.theta + model.bias)
        value += float(r @ r) / s.length
        g_theta -= (u.T @ r) / s.length
        g_bias -= float(r.sum()) / s.length
    return value / (2 * n), g_theta / n, g_bias / n


def soft_threshold(u, tau):
    return np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)


@dataclass(frozen=True)
class TrainConfig:
    nu: float = 1e-3
    max_epochs: int = 5000
    step_size: float | str = "auto"
    tol: float = 1e-8
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if not (self.nu >= 0 and math.isfinite(self.nu)):
            raise ValueError("nu must be a finite value >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.step_size != "auto" and not (isinstance(self.step_size, (int, float)) and self.step_size > 0):
            raise ValueError("step_size must be 'auto' or a positive number")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")

    def to_dict(self) -> dict:
        return {"nu": self.nu, "max_epochs": self.max_epochs, "step_size": self.step_size,
                "tol": self.tol, "seed": self.seed, "standardize": self.standardize}


@dataclass
class TrainResult:
    model: Model
    objective: list[float]
    converged: bool
    epochs: int


class _Quadratic:
    """The smooth loss as 0.5 b'Hb - c'b + const over b = (theta, bias)."""

    def __init__(self, states, y, center, scale):
        n = len(states)
        d = center.size
        self.H = np.zeros((d + 1, d + 1))
        self.c = np.zeros(d + 1)
        self.const = 0.0
        for s, yn in zip(states, y):
            A = np.empty((s.length, d + 1))
            A[:, :d] = (s.states[1:] - center) / scale
            A[:, d] = 1.0
            w = 1.0 / (n * s.length)
            self.H += w * (A.T @ A)
            self.c += w * yn * A.sum(axis=0)
            self.const += 0.5 * w * s.length * yn * yn
            if not (np.all(np.isfinite(A)) and math.isfinite(self.const)):
                raise TrainingError(f"non-finite loss contribution from wafer {s.wafer_id!r}")
        self.H = 0.5 * (self.H + self.H.T)

    def value(self, b):
        return 0.5 * float(b @ self.H @ b) - float(self.c @ b) + self.const

    def grad(self, b):
        return self.H @ b - self.c


def feature_transform(states: Sequence[PartialStateSequence], standardize: bool):
    dim = states[0].states.shape[1]
    if not standardize:
        return np.zeros(dim), np.ones(dim)
    Z = np.concatenate([s.states[1:] for s in states])
    return Z.mean(axis=0), np.maximum(Z.std(axis=0), 1e-8)


def fit(states: Sequence[PartialStateSequence], labels, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """ISTA on the augmented objective, returning the best iterate seen."""
    y = _check_inputs(states, labels)
    dims = {s.states.shape[1] for s in states}
    hashes = {s.embedding_hash for s in states}
    if len(dims) != 1 or len(hashes) != 1:
        raise TrainingError("all wafers must be encoded with the same embedding")
    center, scale = feature_transform(states, cfg.standardize)
    q = _Quadratic(states, y, center, scale)
    d = center.size
    nu = cfg.nu

    def objective(b):
        return q.value(b) + nu * float(np.abs(b[:d]).sum())

    beta = np.zeros(d + 1)
    beta[d] = float(np.mean(y))
    obj = objective(beta)
    history = [obj]
    best, best_obj = beta.copy(), obj
    backtrack = cfg.step_size == "auto"
    step = 1.0 if backtrack else float(cfg.step_size)
    converged = False
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        g = q.grad(beta)
        f0 = q.value(beta)
        while True:
            cand = beta - step * g
            cand[:d] = soft_threshold(cand[:d], step * nu)
            delta = cand - beta
            if not backtrack or q.value(cand) <= f0 + g @ delta + (delta @ delta) / (2 * step) + 1e-15:
                break
            step *= 0.5
            if step < 1e-300:
                raise TrainingError("line search failed to find a descent step")
        new_obj = objective(cand)
        if not math.isfinite(new_obj):
            raise TrainingError("objective became non-finite during training")
        history.append(new_obj)
        beta = cand
        if new_obj < best_obj:
            best, best_obj = cand.copy(), new_obj
        if abs(obj - new_obj) <= cfg.tol * max(abs(obj), 1e-300):
            converged = True
            break
        obj = new_obj
    if not converged:
        log.info("ISTA stopped after %d epochs without meeting tol=%g", epoch, cfg.tol)
    emb_hash = next(iter(hashes))
    model = Model(best[:d].copy(), best[d], center, scale, emb_hash)
    return TrainResult(model, history, converged, epoch)


def train(states: Sequence[PartialStateSequence], labels, cfg: TrainConfig = TrainConfig()) -> Model:
    return fit(states, labels, cfg).model


@dataclass(frozen=True)
class Metrics:
    pearson_r: float
    rmse: float
    r2: float
    n: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"pearson_r": self.pearson_r, "rmse": self.rmse, "r2": self.r2, "n": self.n,
                "degenerate": self.degenerate}


def metrics(pred, labels) -> Metrics:
    p, y = np.asarray(pred, dtype=float), np.asarray(labels, dtype=float)
    if p.size == 0:
        raise ValueError("no wafers to evaluate")
    rmse = float(np.sqrt(np.mean((p - y) ** 2)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - p) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    dp, dy = p - p.mean(), y - y.mean()
    denom = math.sqrt(float(dp @ dp) * float(dy @ dy))
    if denom == 0:
        return Metrics(0.0, rmse, r2, p.size, True)
    r = float(np.clip((dp @ dy) / denom, -1.0, 1.0))
    return Metrics(r, rmse, r2, p.size)


def evaluate(model: Model, states: Sequence[PartialStateSequence], labels) -> Metrics:
    """Fit statistics of the full-trajectory predictions f(z_L)."""
    pred = [predict(model, s.final) for s in states]
    return metrics(pred, labels)
