"""Unit-sphere embeddings, the instance softmax over a memory bank, and the bank itself.

Everything here works on plain arrays; the differentiable versions of the
same quantities live in :mod:`vie.losses`. Bank rows are never
differentiated: they are running averages updated outside the graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .autodiff import NORM_EPS


class DegenerateEmbeddingError(ValueError):
    """A vector with (numerically) zero norm cannot be placed on the sphere."""


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    sq = float(np.dot(v, v))
    if not sq > NORM_EPS or not np.isfinite(sq):
        raise DegenerateEmbeddingError(f"cannot normalize a vector with squared norm {sq:g}")
    return v / np.sqrt(sq)


@dataclass(frozen=True)
class SoftmaxParams:
    temperature: float = 0.07
    subset_size: int | None = None  # None: min(N - 1, 512), at least 1

    def __post_init__(self):
        if not 0.0 < self.temperature <= 1.0:
            raise ValueError(f"temperature must lie in (0, 1], got {self.temperature}")
        if self.subset_size is not None and self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")

    def resolve_q(self, n: int) -> int:
        q = self.subset_size if self.subset_size is not None else max(1, min(n - 1, 512))
        if q > n:
            raise ValueError(f"subset_size {q} exceeds bank size {n}")
        return q


class MemoryBank:
    """Per-video running-average embeddings; row ``i`` belongs to video ``i``."""

    def __init__(self, rows, momentum: float = 0.5):
        rows = np.array(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError("bank rows must be a non-empty 2-D array")
        if not 0.0 < momentum <= 1.0:
            raise ValueError("momentum must lie in (0, 1]")
        self.rows = rows
        self.momentum = float(momentum)

    @classmethod
    def init(cls, n: int, dim: int, seed: int, momentum: float = 0.5) -> "MemoryBank":
        """Random bank of ``n`` rows on the sphere in ``dim`` ambient dimensions."""
        if n < 1 or dim < 1:
            raise ValueError("n and dim must be >= 1")
        rng = np.random.default_rng(seed)
        rows = rng.standard_normal((n, dim))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        return cls(rows, momentum)

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def _check(self, i: int) -> None:
        if not 0 <= i < self.count:
            raise IndexError(f"bank index {i} out of range for {self.count} rows")

    def update(self, i: int, e) -> np.ndarray:
        """``row_i <- normalize((1 - mu) row_i + mu e)``; returns the new row."""
        self._check(i)
        mu = self.momentum
        if mu == 1.0:
            self.rows[i] = np.asarray(e, dtype=np.float64)
        else:
            self.rows[i] = normalize((1.0 - mu) * self.rows[i] + mu * np.asarray(e, dtype=np.float64))
        return self.rows[i]

    def copy(self) -> "MemoryBank":
        return MemoryBank(self.rows.copy(), self.momentum)


def bank_init(n: int, dim: int, seed: int, momentum: float = 0.5) -> MemoryBank:
    return MemoryBank.init(n, dim, seed, momentum)


def bank_update(bank: MemoryBank, i: int, e) -> np.ndarray:
    return bank.update(i, e)


def _logits(e, bank: MemoryBank, p: SoftmaxParams) -> np.ndarray:
    return (bank.rows @ np.asarray(e, dtype=np.float64)) / p.temperature


def sample_subset(n: int, q: int, rng: np.random.Generator) -> np.ndarray:
    """``q`` distinct indices from ``range(n)``, uniformly, returned sorted."""
    if q == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=q, replace=False))


def log_partition(e, bank: MemoryBank, p: SoftmaxParams, exact: bool = True,
                  rng: np.random.Generator | None = None) -> float:
    """``log sum_j exp(e_j . e / tau)``, exactly or from an ``N/Q``-rescaled subset."""
    z = _logits(e, bank, p)
    if exact:
        return float(logsumexp(z))
    n = bank.count
    q = p.resolve_q(n)
    idx = sample_subset(n, q, rng if rng is not None else np.random.default_rng())
    return float(logsumexp(z[idx]) + np.log(n / q))


def instance_probability(i: int, e, bank: MemoryBank, p: SoftmaxParams, exact: bool = True,
                         rng: np.random.Generator | None = None) -> float:
    """Probability that ``e`` is recognized as a sample of video ``i``.

    In estimated mode the numerator is always the exact term for ``i``; only
    the denominator is drawn from a ``Q``-subset (rescaled by ``N/Q``).
    """
    bank._check(i)
    z_i = float(bank.rows[i] @ np.asarray(e, dtype=np.float64)) / p.temperature
    return float(np.exp(z_i - log_partition(e, bank, p, exact, rng)))


def set_probability(indices, e, bank: MemoryBank, p: SoftmaxParams) -> float:
    """Total probability of the index set, sharing one (exact) denominator."""
    idx = np.unique(np.asarray(list(indices), dtype=np.int64))
    if idx.size == 0:
        raise ValueError("index set must be non-empty")
    if idx.min() < 0 or idx.max() >= bank.count:
        raise IndexError("index set contains an out-of-range index")
    z = _logits(e, bank, p)
    return float(np.exp(logsumexp(z[idx]) - logsumexp(z)))
