"""Wafer history / label parsing, process tokens and the token dictionary."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

CORE_COLUMNS = ("wafer_id", "step_index", "timestamp")
DEFAULT_SCHEMA = ("eqp", "recipe", "tool_type", "photo_layer", "route")
SEPARATOR = "|"


class IngestError(ValueError):
    """Raised for malformed history or label input."""


@dataclass(frozen=True)
class ProcessStep:
    wafer_id: str
    step_index: int
    timestamp: int
    attrs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "attrs", dict(self.attrs))


@dataclass(frozen=True)
class Trajectory:
    wafer_id: str
    steps: tuple[ProcessStep, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise IngestError(f"wafer {self.wafer_id!r} has no steps")

    @property
    def length(self) -> int:
        return len(self.steps)

    def __len__(self):
        return len(self.steps)

    @property
    def timestamps(self) -> list[int]:
        return [s.timestamp for s in self.steps]

    def prefix(self, k: int) -> "Trajectory":
        return Trajectory(self.wafer_id, self.steps[:k])


@dataclass(frozen=True)
class LabeledDataset:
    trajectories: tuple[Trajectory, ...]
    labels: tuple[float, ...]
    splits: tuple[str, ...]
    lots: tuple[str, ...]
    n_dropped: int = 0

    def __post_init__(self):
        n = len(self.trajectories)
        if not (len(self.labels) == len(self.splits) == len(self.lots) == n):
            raise IngestError("dataset columns have mismatched lengths")
        ids = [t.wafer_id for t in self.trajectories]
        if len(set(ids)) != n:
            raise IngestError("duplicate wafer_id in dataset")

    def __len__(self):
        return len(self.trajectories)

    @property
    def wafer_ids(self) -> list[str]:
        return [t.wafer_id for t in self.trajectories]

    def subset(self, split: str) -> "LabeledDataset":
        idx = [i for i, s in enumerate(self.splits) if s == split]
        return LabeledDataset(
            tuple(self.trajectories[i] for i in idx),
            tuple(self.labels[i] for i in idx),
            tuple(self.splits[i] for i in idx),
            tuple(self.lots[i] for i in idx),
        )

    def with_splits(self, splits: Sequence[str]) -> "LabeledDataset":
        return LabeledDataset(self.trajectories, self.labels, tuple(splits), self.lots, self.n_dropped)


@dataclass
class HistoryFile:
    """Parsed history plus the bookkeeping a caller may want to report."""

    trajectories: list[Trajectory]
    attribute_columns: list[str]
    n_skipped: int = 0
    n_filled: int = 0
    n_nonmonotone: int = 0

    @property
    def n_warnings(self) -> int:
        return self.n_skipped + self.n_filled + self.n_nonmonotone


def parse_timestamp(text: str) -> int:
    """Integer epoch seconds from either an integer literal or ISO-8601 text.

    Naive ISO timestamps are taken as UTC.
    """
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    try:
        return int(text)
    except ValueError:
        pass
    iso = text[:-1] + "+00:00" if text.endswith("Z") else text
    dt = datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def default_schema(attribute_columns: Iterable[str]) -> list[str]:
    """The five standard attributes followed by any extras in alphabetical order."""
    extras = sorted(set(attribute_columns) - set(DEFAULT_SCHEMA))
    return list(DEFAULT_SCHEMA) + extras


def read_history(path, mode: str = "strict") -> HistoryFile:
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown parse mode {mode!r}")
    strict = mode == "strict"
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file, header row required") from None
        missing = [c for c in CORE_COLUMNS if c not in header]
        if missing:
            raise IngestError(f"{path}: header lacks required column(s) {', '.join(missing)}")
        if len(set(header)) != len(header):
            raise IngestError(f"{path}: duplicate column names in header")
        attr_cols = [c for c in header if c not in CORE_COLUMNS]
        absent = [c for c in DEFAULT_SCHEMA if c not in attr_cols]
        if absent and strict:
            raise IngestError(f"{path}: header lacks attribute column(s) {', '.join(absent)}")
        col = {name: i for i, name in enumerate(header)}

        out = HistoryFile([], attr_cols)
        by_wafer: dict[str, dict[int, ProcessStep]] = {}
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) > len(header):
                    raise IngestError("too many fields")
                if strict and len(row) < len(header) or any(col[c] >= len(row) for c in CORE_COLUMNS):
                    raise IngestError(f"expected {len(header)} fields, got {len(row)}")
                wafer_id = row[col["wafer_id"]].strip()
                if not wafer_id:
                    raise IngestError("empty wafer_id")
                try:
                    step_index = int(row[col["step_index"]])
                except ValueError:
                    raise IngestError(f"bad step_index {row[col['step_index']]!r}") from None
                if step_index < 1:
                    raise IngestError(f"step_index must be >= 1, got {step_index}")
                try:
                    ts = parse_timestamp(row[col["timestamp"]])
                except ValueError:
                    raise IngestError(f"bad timestamp {row[col['timestamp']]!r}") from None
                attrs = {c: (row[col[c]] if col[c] < len(row) else "") for c in attr_cols}
                for c in absent:
                    attrs[c] = ""
                steps = by_wafer.setdefault(wafer_id, {})
                if step_index in steps:
                    raise IngestError(f"duplicate step_index {step_index} for wafer {wafer_id!r}")
                empty = [c for c in DEFAULT_SCHEMA if not attrs[c]]
                if empty and strict:
                    raise IngestError(f"missing value for attribute(s) {', '.join(empty)}")
            except IngestError as exc:
                if strict:
                    raise IngestError(f"{path}:{lineno}: {exc}") from None
                log.warning("%s:%d: skipped row (%s)", path, lineno, exc)
                out.n_skipped += 1
                continue
            if empty or len(row) < len(header):
                log.warning("%s:%d: missing attribute value(s) filled with ''", path, lineno)
                out.n_filled += 1
            steps[step_index] = ProcessStep(wafer_id, step_index, ts, attrs)

    for wafer_id, steps in by_wafer.items():
        ordered = [steps[i] for i in sorted(steps)]
        if [s.step_index for s in ordered] != list(range(1, len(ordered) + 1)):
            if strict:
                raise IngestError(f"{path}: wafer {wafer_id!r} step_index values are not contiguous 1..L")
            ordered = [ProcessStep(s.wafer_id, i, s.timestamp, s.attrs) for i, s in enumerate(ordered, 1)]
            out.n_filled += 1
        if any(b.timestamp < a.timestamp for a, b in zip(ordered, ordered[1:])):
            if strict:
                raise IngestError(f"{path}: wafer {wafer_id!r} has decreasing timestamps")
            out.n_nonmonotone += 1
        out.trajectories.append(Trajectory(wafer_id, ordered))
    return out


def parse_history(path, mode: str = "strict") -> list[Trajectory]:
    """Parse a history CSV into one trajectory per wafer, in order of first appearance."""
    return read_history(path, mode).trajectories


def write_history(trajectories: Sequence[Trajectory], path, attribute_columns: Sequence[str] | None = None) -> None:
    if attribute_columns is None:
        seen = {k for t in trajectories for s in t.steps for k in s.attrs}
        attribute_columns = default_schema(seen)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*CORE_COLUMNS, *attribute_columns])
        for t in trajectories:
            for s in t.steps:
                w.writerow([s.wafer_id, s.step_index, s.timestamp, *(s.attrs.get(c, "") for c in attribute_columns)])


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace(SEPARATOR, "\\" + SEPARATOR)


def build_token(step: ProcessStep, schema: Sequence[str]) -> str:
    """Join the schema's attribute values with '|' (escaped inside values)."""
    if not schema:
        raise ValueError("token schema must not be empty")
    return SEPARATOR.join(_escape(step.attrs.get(name, "")) for name in schema)


@dataclass(frozen=True)
class TokenDictionary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in dictionary")
        object.__setattr__(self, "_index", {tok: i for i, tok in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def index(self, token: str) -> int:
        return self._index[token]

    def get(self, token: str, default=None):
        return self._index.get(token, default)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(list(self.tokens), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "TokenDictionary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, list) or not all(isinstance(t, str) for t in data):
            raise IngestError(f"{path}: dictionary must be a JSON array of strings")
        return cls(tuple(data))


def trajectory_tokens(traj: Trajectory, schema: Sequence[str]) -> list[str]:
    return [build_token(s, schema) for s in traj.steps]


def build_dictionary(trajectories: Sequence[Trajectory], schema: Sequence[str]) -> TokenDictionary:
    if not trajectories:
        raise ValueError("need at least one trajectory")
    seen: dict[str, None] = {}
    for traj in trajectories:
        for tok in trajectory_tokens(traj, schema):
            seen.setdefault(tok, None)
    return TokenDictionary(tuple(seen))


@dataclass
class LabelFile:
    labels: dict[str, float]
    lots: dict[str, str]
    splits: dict[str, str]


def read_labels(path) -> LabelFile:
    """Label CSV: ``wafer_id,defect_density`` with optional ``lot_id`` and ``split`` columns."""
    path = Path(path)
    out = LabelFile({}, {}, {})
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in reader.fieldnames or []]
        if "wafer_id" not in fields or "defect_density" not in fields:
            raise IngestError(f"{path}: label header must include wafer_id,defect_density")
        reader.fieldnames = fields
        for row in reader:
            wid = (row["wafer_id"] or "").strip()
            if not wid:
                continue
            if wid in out.labels:
                raise IngestError(f"{path}:{reader.line_num}: duplicate wafer_id {wid!r} in labels")
            try:
                y = float(row["defect_density"])
            except (TypeError, ValueError):
                raise IngestError(f"{path}:{reader.line_num}: bad defect_density {row['defect_density']!r}") from None
            if not y >= 0:
                raise IngestError(f"{path}:{reader.line_num}: negative defect density {y!r} for wafer {wid!r}")
            out.labels[wid] = y
            if row.get("lot_id"):
                out.lots[wid] = row["lot_id"].strip()
            if row.get("split"):
                out.splits[wid] = row["split"].strip()
    return out


def write_labels(path, labels: Mapping[str, float], lots: Mapping[str, str] | None = None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wafer_id", "defect_density"] + (["lot_id"] if lots else []))
        for wid, y in labels.items():
            w.writerow([wid, repr(float(y))] + ([lots[wid]] if lots else []))


def attach_labels(trajectories: Sequence[Trajectory], label_path) -> LabeledDataset:
    """Inner-join trajectories with the label file on wafer_id."""
    lf = read_labels(label_path)
    kept = [t for t in trajectories if t.wafer_id in lf.labels]
    dropped = len(trajectories) - len(kept)
    if dropped:
        log.warning("%d wafer(s) without labels dropped", dropped)
    if not kept:
        raise IngestError("no trajectories matched any label")
    return LabeledDataset(
        tuple(kept),
        tuple(lf.labels[t.wafer_id] for t in kept),
        tuple(lf.splits.get(t.wafer_id, "train") for t in kept),
        tuple(lf.lots.get(t.wafer_id, "") for t in kept),
        n_dropped=dropped,
    )
