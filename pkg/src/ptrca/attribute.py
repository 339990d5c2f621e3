"""Per-step attribution alpha_k = f(z_k) - f(z_{k-1}) and its aggregates."""

from __future__ import annotations

import csv
import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import format_timestamp
from .regress import Model, predict
from .route2vec import PartialStateSequence

CROSS_CHECK_TOL = 1e-9


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class StepScore:
    k: int
    token: str
    timestamp: int
    weight: float
    alpha: float


@dataclass
class AttributionReport:
    wafer_id: str
    prediction: float
    intercept: float
    steps: list[StepScore]
    cumulative: list[tuple[int | None, float]]
    model_hash: str = ""
    label: float | None = None

    @property
    def alphas(self) -> np.ndarray:
        return np.array([s.alpha for s in self.steps])

    def to_dict(self) -> dict:
        return {
            "wafer_id": self.wafer_id,
            "prediction": self.prediction,
            "intercept": self.intercept,
            "label": self.label,
            "model_hash": self.model_hash,
            "steps": [{"k": s.k, "token": s.token, "t": format_timestamp(s.timestamp),
                       "psi": s.weight, "alpha": s.alpha} for s in self.steps],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def save_cumulative(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_iso", "cumulative_value"])
            for t, v in self.cumulative:
                w.writerow([format_timestamp(t) if t is not None else "", repr(v)])


def attribution_scores(model: Model, states: PartialStateSequence) -> np.ndarray:
    """Counterfactual differences f(z_k) - f(z_{k-1}) for k = 1..L.

    For the affine head this is also w . (psi_k x_k) with w the folded weights;
    both routes are computed and must agree.
    """
    if model.embedding_hash and states.embedding_hash and model.embedding_hash != states.embedding_hash:
        raise AttributionError(f"wafer {states.wafer_id!r} was encoded with a different embedding than the model")
    f = predict(model, states.states)
    alpha = np.diff(f)
    w, _ = model.folded()
    closed = np.diff(states.states, axis=0) @ w
    gap = np.max(np.abs(alpha - closed), initial=0.0)
    if gap > CROSS_CHECK_TOL * max(1.0, float(np.max(np.abs(f), initial=0.0))):
        raise AttributionError(f"attribution cross-check failed for {states.wafer_id!r} (gap {gap:.3g})")
    return alpha


def cumulative_series(intercept: float, alphas, timestamps=None) -> list[tuple[int | None, float]]:
    """Running value f(z_0) + sum_{i<=k} alpha_i, starting at the intercept.

    The leading point carries no timestamp; point k carries t_k.
    """
    alphas = np.asarray(alphas, dtype=float)
    values = intercept + np.concatenate([[0.0], np.cumsum(alphas)])
    ts = [None] + (list(timestamps) if timestamps is not None else [None] * alphas.size)
    return [(t, float(v)) for t, v in zip(ts, values)]


def model_digest(model: Model) -> str:
    return hashlib.sha256(json.dumps(model.to_dict(), sort_keys=True).encode()).hexdigest()


def attribute(model: Model, states: PartialStateSequence, label: float | None = None) -> AttributionReport:
    alpha = attribution_scores(model, states)
    f = predict(model, states.states)
    steps = [StepScore(k + 1, states.tokens[k], states.timestamps[k], float(states.weights[k]), float(alpha[k]))
             for k in range(states.length)]
    cum = cumulative_series(float(f[0]), alpha, states.timestamps)
    if abs(cum[-1][1] - f[-1]) > CROSS_CHECK_TOL * max(1.0, abs(f[-1])):
        raise AttributionError(f"cumulative series for {states.wafer_id!r} does not reach f(z_L)")
    return AttributionReport(states.wafer_id, float(f[-1]), float(f[0]), steps, cum, model_digest(model), label)


def rank_processes(report: AttributionReport, m: int) -> list[StepScore]:
    """Top-m steps by signed alpha, largest first; earlier steps win ties."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return sorted(report.steps, key=lambda s: (-s.alpha, s.k))[:m]


@dataclass
class FleetRow:
    token: str
    n: int
    mean_alpha: float
    total_alpha: float
    mean_alpha_high_defect: float


@dataclass
class FleetSummary:
    rows: list[FleetRow]
    high_defect_threshold: float = float("nan")
    n_wafers: int = 0
    meta: dict = field(default_factory=dict)

    def by_mean(self) -> list[FleetRow]:
        return sorted(self.rows, key=lambda r: (-r.mean_alpha, r.token))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["token", "n", "mean_alpha", "total_alpha", "mean_alpha_high_defect"])
            for r in self.rows:
                w.writerow([r.token, r.n, repr(r.mean_alpha), repr(r.total_alpha), repr(r.mean_alpha_high_defect)])


def aggregate_fleet(reports: Sequence[AttributionReport], high_quantile: float = 0.75) -> FleetSummary:
    """Per-token attribution totals and means across wafers.

    A wafer counts as high-defect when its label (or, without a label, its
    prediction) is at or above the ``high_quantile`` of the fleet.  Rows are
    in order of first appearance after sorting reports by wafer_id.
    """
    if not reports:
        raise ValueError("need at least one report")
    if len({r.model_hash for r in reports}) != 1:
        raise AttributionError("reports come from different models")
    reports = sorted(reports, key=lambda r: r.wafer_id)
    score = np.array([r.label if r.label is not None else r.prediction for r in reports])
    threshold = float(np.quantile(score, high_quantile))
    total: dict[str, float] = defaultdict(float)
    count: dict[str, int] = defaultdict(int)
    hi_total: dict[str, float] = defaultdict(float)
    hi_count: dict[str, int] = defaultdict(int)
    for r, s in zip(reports, score):
        high = s >= threshold
        for st in r.steps:
            total[st.token] += st.alpha
            count[st.token] += 1
            if high:
                hi_total[st.token] += st.alpha
                hi_count[st.token] += 1
    rows = [FleetRow(tok, count[tok], total[tok] / count[tok], total[tok],
                     hi_total[tok] / hi_count[tok] if hi_count[tok] else float("nan"))
            for tok in total]
    return FleetSummary(rows, threshold, len(reports), {"model_hash": reports[0].model_hash})
