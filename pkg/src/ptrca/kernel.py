"""Gap-weighted subsequence kernel between process tokens.

The order-p kernel counts every common length-p subsequence u of s and t,
weighting each pair of occurrences by lam**(span_s + span_t), where a span is
last index - first index + 1.  Evaluation is the usual prefix recursion, but
each level is written as a pair of triangular matrix products so the inner
loops run in numpy.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import TokenDictionary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelParams:
    max_len: int = 3
    decay: float = 0.8
    weights: tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if len(self.weights) != self.max_len:
            raise ValueError(f"need {self.max_len} length weights, got {len(self.weights)}")
        if any(w < 0 or not np.isfinite(w) for w in self.weights):
            raise ValueError("length weights must be finite and non-negative")
        if not any(w > 0 for w in self.weights):
            raise ValueError("at least one length weight must be positive")

    @classmethod
    def uniform(cls, max_len: int = 3, decay: float = 0.8) -> "KernelParams":
        return cls(max_len, decay, (1.0,) * max_len)

    def to_dict(self) -> dict:
        return {"max_len": self.max_len, "decay": self.decay, "weights": list(self.weights)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@lru_cache(maxsize=512)
def _decay_matrix(n: int, lam: float) -> np.ndarray:
    # T[a, b] = lam**(a - b + 1) for b <= a, else 0
    d = np.arange(n)[:, None] - np.arange(n)[None, :]
    return np.where(d >= 0, lam ** (np.maximum(d, 0) + 1.0), 0.0)


def _levels(s: str, t: str, p: int, lam: float) -> np.ndarray:
    """Kernel values for every order 1..p (index 0 holds order 1)."""
    out = np.zeros(p)
    n, m = len(s), len(t)
    if n == 0 or m == 0:
        return out
    match = (np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)[:, None]
             == np.frombuffer(t.encode("utf-32-le"), dtype=np.uint32)[None, :]).astype(float)
    Ts, Tt = _decay_matrix(n, lam), _decay_matrix(m, lam)
    lam2 = lam * lam
    # kp[a, b]: weighted count of length-(i) subsequences in s[:a], t[:b], with
    # the span measured up to the end of each prefix.  kp is the level below.
    kp = np.ones((n, m))  # K'_0 restricted to prefixes ending before each char
    for i in range(p):
        e = match * kp
        out[i] = lam2 * e.sum()
        if i == p - 1:
            break
        full = Ts @ e @ Tt.T  # K'_{i+1}[a+1, b+1]
        kp = np.zeros((n, m))
        kp[1:, 1:] = full[:-1, :-1]
    return out


def _ordered(s: str, t: str) -> tuple[str, str]:
    # evaluate on a canonical ordering so k(s, t) == k(t, s) bit for bit
    return (s, t) if s <= t else (t, s)


def subseq_kernel_p(s: str, t: str, p: int, lam: float) -> float:
    """Order-``p`` gap-weighted subsequence kernel with decay ``lam``."""
    if p < 1:
        raise ValueError("subsequence length p must be >= 1")
    if not 0 < lam <= 1:
        raise ValueError("decay must lie in (0, 1]")
    a, b = _ordered(s, t)
    return float(_levels(a, b, p, lam)[p - 1])


def blended_kernel(s: str, t: str, params: KernelParams) -> float:
    """Weighted sum of the order-1..P kernels."""
    a, b = _ordered(s, t)
    return float(np.dot(params.weights, _levels(a, b, params.max_len, params.decay)))


def _normalize(k: float, kss: float, ktt: float, same: bool) -> float:
    if kss <= 0 or ktt <= 0:
        return 1.0 if same else 0.0
    return min(1.0, max(0.0, k / np.sqrt(kss * ktt)))


def normalized_kernel(s: str, t: str, params: KernelParams) -> float:
    """Cosine-normalised blended kernel, in [0, 1] with unit self-similarity."""
    kss, ktt = blended_kernel(s, s, params), blended_kernel(t, t, params)
    if kss <= 0 or ktt <= 0:
        warnings.warn(f"zero self-kernel for {s if kss <= 0 else t!r}; normalised value set by identity", RuntimeWarning)
    if s == t:
        return 1.0
    return _normalize(blended_kernel(s, t, params), kss, ktt, False)


@dataclass(frozen=True)
class KernelMatrix:
    tokens: tuple[str, ...]
    values: np.ndarray
    params: KernelParams = field(default_factory=KernelParams)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def dictionary_hash(self) -> str:
        return dictionary_hash(self.tokens)

    def to_csv(self, path) -> None:
        path = Path(path)
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")
        sidecar = {
            "params": self.params.to_dict(),
            "params_hash": self.params.digest(),
            "dictionary_hash": self.dictionary_hash(),
            "size": self.size,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path, dictionary: TokenDictionary) -> "KernelMatrix":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        if meta["dictionary_hash"] != dictionary_hash(dictionary.tokens):
            raise ValueError(f"{path}: kernel matrix was computed for a different token dictionary")
        values = np.loadtxt(path, delimiter=",", ndmin=2)
        p = meta["params"]
        return cls(dictionary.tokens, values, KernelParams(p["max_len"], p["decay"], tuple(p["weights"])))


def dictionary_hash(tokens: Sequence[str]) -> str:
    return hashlib.sha256(json.dumps(list(tokens)).encode("utf-8")).hexdigest()


def _row_levels(s: str, others: np.ndarray, p: int, lam: float) -> np.ndarray:
    """Order-1..p kernels of ``s`` against a padded code matrix (rows = tokens).

    Padding sits at the end of each row and never matches, so it only extends
    the decay tails and leaves every kernel value unchanged.
    """
    n = len(s)
    J, L = others.shape
    out = np.zeros((p, J))
    if n == 0 or J == 0:
        return out
    codes = np.array([ord(c) for c in s], dtype=np.int64)
    match = (codes[:, None, None] == others[None, :, :]).astype(float)
    Ts, TL = _decay_matrix(n, lam), _decay_matrix(L, lam)
    kp = np.ones((n, J, L))
    for i in range(p):
        e = match * kp
        out[i] = lam * lam * e.sum(axis=(0, 2))
        if i == p - 1:
            break
        full = (Ts @ e.reshape(n, J * L)).reshape(n * J, L) @ TL.T
        full = full.reshape(n, J, L)
        kp = np.zeros((n, J, L))
        kp[1:, :, 1:] = full[:-1, :, :-1]
    return out


def kernel_matrix(dictionary: TokenDictionary | Sequence[str], params: KernelParams | None = None,
                  chunk: int = 256) -> KernelMatrix:
    """Normalised kernel over all token pairs; each unordered pair is evaluated once."""
    params = params or KernelParams()
    tokens = tuple(dictionary.tokens if isinstance(dictionary, TokenDictionary) else dictionary)
    n = len(tokens)
    if n < 1:
        raise ValueError("empty dictionary")
    w = np.asarray(params.weights)
    self_k = np.array([float(w @ _levels(t, t, params.max_len, params.decay)) for t in tokens])
    degenerate = [tokens[i] for i in np.flatnonzero(self_k <= 0)]
    if degenerate:
        warnings.warn(f"{len(degenerate)} token(s) have zero self-kernel, e.g. {degenerate[0]!r}", RuntimeWarning)
    width = max(1, max(len(t) for t in tokens))
    codes = np.full((n, width), -1, dtype=np.int64)
    for i, t in enumerate(tokens):
        codes[i, : len(t)] = [ord(c) for c in t]
    K = np.eye(n)
    for i in range(n - 1):
        for lo in range(i + 1, n, chunk):
            hi = min(n, lo + chunk)
            raw = w @ _row_levels(tokens[i], codes[lo:hi], params.max_len, params.decay)
            for j, r in zip(range(lo, hi), raw):
                K[i, j] = K[j, i] = _normalize(float(r), self_k[i], self_k[j], False)
    return KernelMatrix(tokens, K, params)
