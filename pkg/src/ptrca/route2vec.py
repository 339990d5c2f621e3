"""Partial-trajectory states: z_0 = 0, z_k = psi(t_k, t_{k-1}) x_k + z_{k-1}."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import Trajectory, build_token, format_timestamp
from .proc2vec import EmbeddingTable


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class TemporalConfig:
    """How waiting times become step weights.

    ``first_step_dt`` (hours) stands in for the undefined wait before step 1.
    """

    first_step_dt: float = 0.0
    clamp_negative_dt: bool = False
    unknown_tokens: str = "error"  # or "zero"

    time_unit = "hours"

    def __post_init__(self):
        if not (math.isfinite(self.first_step_dt) and self.first_step_dt >= 0):
            raise ValueError("first_step_dt must be finite and >= 0")
        if self.unknown_tokens not in ("error", "zero"):
            raise ValueError("unknown_tokens must be 'error' or 'zero'")

    def to_dict(self) -> dict:
        return {"time_unit": self.time_unit, "first_step_dt": self.first_step_dt,
                "clamp_negative_dt": self.clamp_negative_dt, "unknown_tokens": self.unknown_tokens}


def psi(dt_hours: float) -> float:
    return math.log10(1.0 + dt_hours)


def temporal_weight(t_k: int, t_prev: int, cfg: TemporalConfig = TemporalConfig()) -> float:
    """log10(1 + elapsed hours) between two epoch-second timestamps."""
    dt = (t_k - t_prev) / 3600.0
    if dt < 0:
        if not cfg.clamp_negative_dt:
            raise EncodingError(f"negative waiting time ({t_k} < {t_prev})")
        dt = 0.0
    return psi(dt)


@dataclass(frozen=True)
class PartialStateSequence:
    wafer_id: str
    states: np.ndarray  # (L + 1, D); row 0 is z_0
    weights: np.ndarray  # (L,)
    timestamps: tuple[int, ...]
    tokens: tuple[str, ...]
    embedding_hash: str = ""

    @property
    def length(self) -> int:
        return len(self.weights)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def step_weights(traj: Trajectory, cfg: TemporalConfig = TemporalConfig()) -> np.ndarray:
    ts = traj.timestamps
    w = [psi(cfg.first_step_dt)]
    for prev, cur in zip(ts, ts[1:]):
        try:
            w.append(temporal_weight(cur, prev, cfg))
        except EncodingError as exc:
            raise EncodingError(f"wafer {traj.wafer_id!r}: {exc}") from None
    return np.array(w)


def encode_states(traj: Trajectory, emb: EmbeddingTable, schema: Sequence[str],
                  cfg: TemporalConfig = TemporalConfig()) -> PartialStateSequence:
    tokens = tuple(build_token(s, schema) for s in traj.steps)
    X = np.zeros((len(tokens), emb.dim))
    for k, tok in enumerate(tokens):
        i = emb.index(tok)
        if i is None:
            if cfg.unknown_tokens == "error":
                raise EncodingError(f"wafer {traj.wafer_id!r} step {k + 1}: unknown token {tok!r}")
            warnings.warn(f"unknown token {tok!r} mapped to the zero vector", RuntimeWarning)
            continue
        X[k] = emb.vectors[i]
    w = step_weights(traj, cfg)
    Z = np.zeros((len(tokens) + 1, emb.dim))
    # cumsum adds strictly left to right, so any prefix reproduces these rows exactly
    np.cumsum(w[:, None] * X, axis=0, out=Z[1:])
    return PartialStateSequence(traj.wafer_id, Z, w, tuple(traj.timestamps), tokens, emb.digest())


def encode_many(trajectories, emb, schema, cfg=TemporalConfig()) -> list[PartialStateSequence]:
    return [encode_states(t, emb, schema, cfg) for t in trajectories]


def write_states(seqs: Sequence[PartialStateSequence], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        dim = seqs[0].states.shape[1] if seqs else 0
        w.writerow(["wafer_id", "k", "t_k", "w_k"] + [f"z_{d + 1}" for d in range(dim)])
        for s in seqs:
            w.writerow([s.wafer_id, 0, "", ""] + [repr(float(v)) for v in s.states[0]])
            for k in range(1, s.length + 1):
                w.writerow([s.wafer_id, k, format_timestamp(s.timestamps[k - 1]), repr(float(s.weights[k - 1]))]
                           + [repr(float(v)) for v in s.states[k]])
