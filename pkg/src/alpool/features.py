"""Sparse hashed n-gram features shared by every linear model.

Hashing is FNV-1a 64 reduced modulo 2^hash_bits so that serialized models
score identically across runs, processes, and platforms. Collisions are
tolerated and accumulate additively, as usual for the hashing trick.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import sparse

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """Plain FNV-1a over the bytes, 64-bit wraparound."""
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _U64
    return h


def mix64(h: int) -> int:
    """fmix64 finalizer; raw FNV output correlates across similar strings."""
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & _U64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & _U64
    h ^= h >> 33
    return h


def stable_hash64(s: str) -> int:
    """Well-mixed 64-bit hash of a string, stable across runs and platforms."""
    return mix64(fnv1a64(s.encode("utf-8")))


@lru_cache(maxsize=1 << 20)
def hash_token(s: str, bits: int) -> int:
    if not 10 <= bits <= 30:
        raise ValueError(f"hash_bits must be in [10, 30], got {bits}")
    return fnv1a64(s.encode("utf-8")) & ((1 << bits) - 1)


@dataclass(frozen=True)
class FeatureConfig:
    ngram_orders: tuple[int, ...] = (1, 2, 3)
    hash_bits: int = 18
    lowercase: bool = True

    def __post_init__(self):
        orders = tuple(sorted(set(self.ngram_orders)))
        if not orders:
            raise ValueError("ngram_orders must be non-empty")
        if any(n not in (1, 2, 3) for n in orders):
            raise ValueError(f"ngram_orders must be a subset of {{1,2,3}}, got {orders}")
        if not 10 <= self.hash_bits <= 30:
            raise ValueError(f"hash_bits must be in [10, 30], got {self.hash_bits}")
        object.__setattr__(self, "ngram_orders", orders)

    @property
    def dim(self) -> int:
        return 1 << self.hash_bits

    def to_dict(self) -> dict:
        return {
            "ngram_orders": list(self.ngram_orders),
            "hash_bits": self.hash_bits,
            "lowercase": self.lowercase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(
            ngram_orders=tuple(d["ngram_orders"]),
            hash_bits=int(d["hash_bits"]),
            lowercase=bool(d["lowercase"]),
        )


@dataclass(frozen=True)
class FeatureVector:
    """Sparse vector as parallel (sorted index, value) arrays, no zeros."""

    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def from_counts(cls, counts: dict[int, float]) -> "FeatureVector":
        items = sorted((i, v) for i, v in counts.items() if v != 0.0)
        idx = np.array([i for i, _ in items], dtype=np.int64)
        val = np.array([v for _, v in items], dtype=np.float64)
        return cls(indices=idx, values=val)

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def total(self) -> float:
        return float(self.values.sum())

    def dot(self, weights: np.ndarray) -> float:
        if self.nnz == 0:
            return 0.0
        return float(weights[self.indices] @ self.values)


EMPTY_VECTOR = FeatureVector(
    indices=np.array([], dtype=np.int64), values=np.array([], dtype=np.float64)
)


def ngram_strings(tokens: Sequence[str], config: FeatureConfig) -> list[str]:
    """Raw n-gram keys before hashing, joined by underscores."""
    toks = [t.lower() for t in tokens] if config.lowercase else list(tokens)
    out: list[str] = []
    for n in config.ngram_orders:
        out.extend("_".join(toks[i : i + n]) for i in range(len(toks) - n + 1))
    return out


def extract_ngrams(tokens: Sequence[str], config: FeatureConfig) -> FeatureVector:
    """Hashed {1,2,3}-gram counts; collisions accumulate."""
    counts: dict[int, float] = {}
    for gram in ngram_strings(tokens, config):
        idx = hash_token(gram, config.hash_bits)
        counts[idx] = counts.get(idx, 0.0) + 1.0
    if not counts:
        return EMPTY_VECTOR
    return FeatureVector.from_counts(counts)


def stack_vectors(vectors: Sequence[FeatureVector], dim: int) -> sparse.csr_matrix:
    """CSR matrix of feature vectors for bulk scoring."""
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, fv in enumerate(vectors):
        indptr[i + 1] = indptr[i] + fv.nnz
    if len(vectors) == 0:
        return sparse.csr_matrix((0, dim), dtype=np.float64)
    indices = np.concatenate([fv.indices for fv in vectors]) if indptr[-1] else np.array([], dtype=np.int64)
    data = np.concatenate([fv.values for fv in vectors]) if indptr[-1] else np.array([], dtype=np.float64)
    return sparse.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))
