"""Workdir-backed pipeline stages shared by the command line and the demos.

Every artifact records the hashes of what it was built from.  A stage reuses
an existing artifact only when those hashes and its own settings match the
current run; otherwise it rebuilds it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .attribute import AttributionReport, FleetSummary, aggregate_fleet, attribute as attribute_wafer
from .ingest import (LabeledDataset, TokenDictionary, attach_labels, build_dictionary, default_schema,
                     read_history)
from .kernel import KernelMatrix, KernelParams, kernel_matrix
from .proc2vec import DEFAULT_DIM, EmbeddingTable, baseline_embedding, embed_tokens
from .regress import Metrics, Model, TrainConfig, evaluate, fit, predict
from .route2vec import TemporalConfig, encode_many

log = logging.getLogger(__name__)

TRAIN, HELDOUT = "train", "heldout"


@dataclass
class RunConfig:
    workdir: str = "."
    history: str = ""
    labels: str = ""
    parse_mode: str = "strict"
    schema: str = ""  # comma list; empty means the default schema
    kernel_p: int = 3
    kernel_lambda: float = 0.8
    kernel_mu: str = ""  # comma list; empty means all ones
    embedding: str = "kernel"
    dim: int = DEFAULT_DIM
    first_step_dt: float = 0.0
    unknown_tokens: str = "error"
    nu: float = 1e-3
    max_epochs: int = 5000
    step_size: str = "auto"
    tol: float = 1e-8
    standardize: bool = True
    holdout: float = 0.2
    seed: int = 0

    @property
    def root(self) -> Path:
        return Path(self.workdir)

    def history_path(self) -> Path:
        return Path(self.history) if self.history else self.root / "history.csv"

    def labels_path(self) -> Path:
        return Path(self.labels) if self.labels else self.root / "labels.csv"

    def kernel_params(self) -> KernelParams:
        mu = [float(x) for x in self.kernel_mu.split(",")] if self.kernel_mu else [1.0] * self.kernel_p
        return KernelParams(self.kernel_p, self.kernel_lambda, tuple(mu))

    def temporal(self) -> TemporalConfig:
        return TemporalConfig(self.first_step_dt, self.parse_mode == "lenient", self.unknown_tokens)

    def train_config(self) -> TrainConfig:
        step = self.step_size if self.step_size == "auto" else float(self.step_size)
        return TrainConfig(self.nu, self.max_epochs, step, self.tol, self.seed, self.standardize)

    def snapshot(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config_file(path) -> dict[str, str]:
    """``key = value`` lines; '#' starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def coerce_config(values: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    kw = {}
    for key, raw in values.items():
        if key not in types:
            raise KeyError(key)
        t = types[key]
        kw[key] = parse_bool(raw) if t == "bool" else int(raw) if t == "int" else float(raw) if t == "float" else raw
    return replace(base, **kw)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_if_changed(path: Path, text: str) -> None:
    if not path.exists() or path.read_text(encoding="utf-8") != text:
        path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def assign_splits(wafer_ids, lots, fraction: float, seed: int) -> list[str]:
    """Hold out whole lots (or single wafers when no lot is known) until ``fraction`` is reached."""
    if not 0 <= fraction < 1:
        raise ValueError("holdout fraction must lie in [0, 1)")
    groups: dict[str, list[int]] = {}
    for i, (w, lot) in enumerate(zip(wafer_ids, lots)):
        groups.setdefault(lot or f"__wafer__{w}", []).append(i)
    keys = sorted(groups)
    order = np.random.default_rng(seed).permutation(len(keys))
    target = int(round(fraction * len(wafer_ids)))
    splits = [TRAIN] * len(wafer_ids)
    taken = 0
    for g in order:
        size = len(groups[keys[g]])
        # a lot joins only if it moves the held-out count closer to the target
        if abs(taken + size - target) >= abs(taken - target) or taken + size >= len(wafer_ids):
            continue
        for i in groups[keys[g]]:
            splits[i] = HELDOUT
        taken += size
    return splits


@dataclass
class Workspace:
    cfg: RunConfig
    dataset: LabeledDataset | None = None
    dictionary: TokenDictionary | None = None
    schema: list[str] = field(default_factory=list)
    dataset_hash: str = ""

    @property
    def root(self) -> Path:
        return self.cfg.root

    # -- ingest -----------------------------------------------------------
    def ingest(self) -> LabeledDataset:
        cfg = self.cfg
        self.root.mkdir(parents=True, exist_ok=True)
        hist = read_history(cfg.history_path(), cfg.parse_mode)
        if hist.n_warnings:
            log.warning("history: %d skipped, %d filled, %d non-monotone", hist.n_skipped, hist.n_filled,
                        hist.n_nonmonotone)
        ds = attach_labels(hist.trajectories, cfg.labels_path())
        label_has_split = _label_file_has_split(cfg.labels_path())
        if not label_has_split:
            ds = ds.with_splits(assign_splits(ds.wafer_ids, ds.lots, cfg.holdout, cfg.seed))
        self.schema = [s.strip() for s in cfg.schema.split(",")] if cfg.schema else default_schema(hist.attribute_columns)
        train_part = [t for t, s in zip(ds.trajectories, ds.splits) if s == TRAIN] or list(ds.trajectories)
        # the vocabulary comes from every ingested wafer so held-out wafers encode without fallbacks
        self.dictionary = build_dictionary(list(ds.trajectories), self.schema)
        self.dataset = ds
        summary = {
            "history_sha256": sha256_file(cfg.history_path()),
            "labels_sha256": sha256_file(cfg.labels_path()),
            "schema": self.schema,
            "n_wafers": len(ds),
            "n_train": len(train_part),
            "n_dropped": ds.n_dropped,
            "vocabulary_size": self.dictionary.size,
            "splits": dict(zip(ds.wafer_ids, ds.splits)),
        }
        self.dataset_hash = hashlib.sha256(_dump(summary).encode()).hexdigest()
        self.dictionary.to_json(self.root / "dictionary.json")
        _write_if_changed(self.root / "dataset.json", _dump({**summary, "dataset_hash": self.dataset_hash}))
        return ds

    def _need_dataset(self):
        if self.dataset is None:
            self.ingest()

    # -- kernel -----------------------------------------------------------
    def kernel(self, force: bool = False) -> KernelMatrix:
        self._need_dataset()
        params = self.cfg.kernel_params()
        path = self.root / "kernel.csv"
        meta_path = path.with_suffix(".json")
        if not force and meta_path.exists():
            meta = json.loads(meta_path.read_text())
            if meta.get("dictionary_hash") == _dict_hash(self.dictionary) and meta.get("params_hash") == params.digest():
                return KernelMatrix.from_csv(path, self.dictionary)
        K = kernel_matrix(self.dictionary, params)
        K.to_csv(path)
        return K

    # -- embedding --------------------------------------------------------
    def embedding(self, mode: str | None = None, force: bool = False, write: bool = True) -> EmbeddingTable:
        self._need_dataset()
        mode = mode or self.cfg.embedding
        if mode == "kernel":
            K = self.kernel()
            upstream = {"kernel_params_hash": K.params.digest(), "kernel_sha256": sha256_file(self.root / "kernel.csv")}
        else:
            upstream = {"dictionary_hash": _dict_hash(self.dictionary)}
        path = self.root / "embedding.csv"
        prov_path = self.root / "embedding.provenance.json"
        wanted = {"mode": mode, "dim": self.cfg.dim if mode == "kernel" else None, **upstream}
        if not force and write and prov_path.exists() and json.loads(prov_path.read_text()) == wanted:
            return EmbeddingTable.from_csv(path, self.dictionary)
        if mode == "kernel":
            emb = embed_tokens(K, self.cfg.dim)
        else:
            emb = baseline_embedding(self.dictionary, mode)
        if write:
            emb.to_csv(path)
            prov_path.write_text(_dump(wanted))
        return emb

    # -- training ---------------------------------------------------------
    def _model_meta(self, emb: EmbeddingTable) -> dict:
        return {
            "embedding_mode": emb.mode,
            "kernel_params_hash": self.cfg.kernel_params().digest() if emb.mode == "kernel" else "",
            "temporal_config": self.cfg.temporal().to_dict(),
            "train_config": self.cfg.train_config().to_dict(),
            "schema": self.schema,
            "dataset_hash": self.dataset_hash,
        }

    def fit_model(self, emb: EmbeddingTable):
        ds = self.dataset.subset(TRAIN)
        if len(ds) == 0:
            raise ValueError("no training wafers")
        states = encode_many(ds.trajectories, emb, self.schema, self.cfg.temporal())
        res = fit(states, ds.labels, self.cfg.train_config())
        res.model.meta = self._model_meta(emb)
        return res

    def train(self, force: bool = True) -> Model:
        emb = self.embedding()
        path = self.root / "model.json"
        if not force and path.exists():
            model = Model.load(path)
            if model.embedding_hash == emb.digest() and model.meta == self._model_meta(emb):
                return model
        res = self.fit_model(emb)
        res.model.save(path)
        metrics = {split: self.metrics(res.model, emb, split).to_dict() for split in (TRAIN, HELDOUT)
                   if split in self.dataset.splits}
        metrics["epochs"] = res.epochs
        metrics["converged"] = res.converged
        (self.root / "metrics.json").write_text(_dump(metrics))
        return res.model

    def load_model(self, emb: EmbeddingTable | None = None) -> tuple[Model, EmbeddingTable]:
        emb = emb or self.embedding()
        path = self.root / "model.json"
        if not path.exists():
            return self.train(force=False), emb
        return Model.load(path, embedding_hash=emb.digest()), emb

    def metrics(self, model: Model, emb: EmbeddingTable, split: str) -> Metrics:
        ds = self.dataset.subset(split)
        states = encode_many(ds.trajectories, emb, self.schema, self.cfg.temporal())
        return evaluate(model, states, ds.labels)

    # -- predict / attribute ----------------------------------------------
    def predict(self, out: Path | None = None) -> Path:
        self._need_dataset()
        model, emb = self.load_model()
        out = out or self.root / "predictions.csv"
        states = encode_many(self.dataset.trajectories, emb, self.schema, self.cfg.temporal())
        with out.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["wafer_id", "split", "prediction", "defect_density"])
            for s, y, split in zip(states, self.dataset.labels, self.dataset.splits):
                w.writerow([s.wafer_id, split, repr(predict(model, s.final)), repr(y)])
        return out

    def attribute(self, wafers: list[str] | None = None, split: str | None = None,
                  top: int = 3) -> tuple[list[AttributionReport], FleetSummary | None]:
        self._need_dataset()
        model, emb = self.load_model()
        ds = self.dataset
        idx = {w: i for i, w in enumerate(ds.wafer_ids)}
        if wafers:
            missing = [w for w in wafers if w not in idx]
            if missing:
                raise KeyError(f"unknown wafer(s): {', '.join(missing)}")
            chosen = [idx[w] for w in wafers]
        else:
            chosen = [i for i, s in enumerate(ds.splits) if split is None or s == split]
        out_dir = self.root / "reports"
        out_dir.mkdir(exist_ok=True)
        reports = []
        for i in chosen:
            states = encode_many([ds.trajectories[i]], emb, self.schema, self.cfg.temporal())[0]
            rep = attribute_wafer(model, states, label=ds.labels[i])
            rep.save(out_dir / f"{rep.wafer_id}.json")
            rep.save_cumulative(out_dir / f"{rep.wafer_id}_cumulative.csv")
            reports.append(rep)
        fleet = None
        if len(reports) > 1:
            fleet = aggregate_fleet(reports)
            fleet.to_csv(self.root / "fleet_summary.csv")
        return reports, fleet

    # -- ablation ---------------------------------------------------------
    def ablation(self, modes=("constant", "onehot", "kernel")) -> dict[str, Metrics]:
        self._need_dataset()
        results = {}
        for mode in modes:
            emb = self.embedding(mode, write=False)
            model = self.fit_model(emb).model
            results[mode] = self.metrics(model, emb, HELDOUT if HELDOUT in self.dataset.splits else TRAIN)
        with (self.root / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["embedding", "pearson_r", "rmse", "r2", "n"])
            for mode, m in results.items():
                w.writerow([mode, repr(m.pearson_r), repr(m.rmse), repr(m.r2), m.n])
        return results


def _dict_hash(dictionary: TokenDictionary) -> str:
    from .kernel import dictionary_hash
    return dictionary_hash(dictionary.tokens)


def _label_file_has_split(path) -> bool:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    return "split" in [h.strip() for h in header]
