"""Token embeddings from the kernel matrix, plus the one-hot / constant baselines."""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import TokenDictionary

MODES = ("kernel", "onehot", "constant")
DEFAULT_DIM = 32


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, same order


def eigendecompose(K) -> EigenSystem:
    """Full symmetric eigendecomposition, eigenvalues in descending order.

    Each eigenvector is flipped so that its largest-magnitude entry is
    non-negative (first such entry on ties), which pins the sign and makes the
    embedding reproducible.
    """
    K = np.asarray(getattr(K, "values", K), dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    scale = max(1.0, float(np.max(np.abs(K)))) if K.size else 1.0
    if np.max(np.abs(K - K.T), initial=0.0) > 1e-12 * scale:
        raise ValueError("kernel matrix is not symmetric")
    lam, V = np.linalg.eigh(K)
    lam, V = lam[::-1].copy(), V[:, ::-1].copy()
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[pivot, np.arange(V.shape[1])] < 0, -1.0, 1.0)
    return EigenSystem(lam, V * signs)


@dataclass(frozen=True)
class EmbeddingTable:
    tokens: tuple[str, ...]
    vectors: np.ndarray
    mode: str = "kernel"
    spectrum: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        v = np.array(self.vectors, dtype=float, ndmin=2)
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        if self.mode not in MODES:
            raise ValueError(f"unknown embedding mode {self.mode!r}")
        if v.shape[0] != len(self.tokens):
            raise ValueError("one embedding row per token required")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding contains non-finite values")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def index(self, token: str) -> int | None:
        return self._index.get(token)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"mode": self.mode, "tokens": list(self.tokens)}).encode("utf-8"))
        h.update(np.ascontiguousarray(self.vectors, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["token_index"] + [f"x_{d + 1}" for d in range(self.dim)])
            for i, row in enumerate(self.vectors):
                w.writerow([i] + [repr(float(x)) for x in row])
        meta = {
            "mode": self.mode,
            "dim": self.dim,
            "spectrum": [float(x) for x in self.spectrum],
            "embedding_hash": self.digest(),
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path, dictionary: TokenDictionary) -> "EmbeddingTable":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        vectors = np.array([[float(x) for x in r[1:]] for r in rows]).reshape(len(rows), meta["dim"])
        table = cls(dictionary.tokens, vectors, meta["mode"], tuple(meta["spectrum"]))
        if table.digest() != meta["embedding_hash"]:
            raise ValueError(f"{path}: embedding does not match its sidecar hash or the token dictionary")
        return table


def embed_tokens(K, dim: int = DEFAULT_DIM, tokens=None) -> EmbeddingTable:
    """Row i is (sqrt(l_1) v_i1, ..., sqrt(l_D) v_iD) over the top-D eigenpairs.

    Negative eigenvalues are clamped to zero.  Columns beyond the numerical
    rank (eigenvalue <= 1e-10 * largest) are zero.
    """
    if dim < 1:
        raise ValueError("embedding dimension must be >= 1")
    if tokens is None:
        tokens = getattr(K, "tokens", None)
    eig = eigendecompose(K)
    n = eig.eigenvalues.size
    if tokens is None:
        tokens = tuple(str(i) for i in range(n))
    lam = np.clip(eig.eigenvalues, 0.0, None)
    top = lam[0] if n else 0.0
    rank = int(np.sum(lam > 1e-10 * top)) if top > 0 else 0
    if dim > rank:
        warnings.warn(f"embedding dimension {dim} exceeds numerical rank {rank}; extra columns are zero",
                      RuntimeWarning)
    X = np.zeros((n, dim))
    k = min(dim, n)
    X[:, :k] = eig.eigenvectors[:, :k] * np.sqrt(lam[:k])
    X[:, rank:] = 0.0
    return EmbeddingTable(tuple(tokens), X, "kernel", tuple(float(x) for x in eig.eigenvalues))


def baseline_embedding(dictionary: TokenDictionary, mode: str) -> EmbeddingTable:
    tokens = tuple(dictionary.tokens)
    if mode == "onehot":
        return EmbeddingTable(tokens, np.eye(len(tokens)), "onehot")
    if mode == "constant":
        return EmbeddingTable(tokens, np.ones((len(tokens), 1)), "constant")
    raise ValueError(f"baseline mode must be 'onehot' or 'constant', got {mode!r}")
