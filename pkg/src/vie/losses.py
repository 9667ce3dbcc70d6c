"""Instance Recognition and Local Aggregation objectives on the tape.

Both losses are differentiable in the current embedding ``e`` (and through
it in the encoder weights). Bank rows enter as constants. All set sums are
evaluated as masked log-sum-exp with a per-row max shift, so the shared
partition function never has to be formed for Local Aggregation: it
cancels between numerator and denominator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedding import MemoryBank, SoftmaxParams, sample_subset
from .neighbors import NeighborSets

logger = logging.getLogger(__name__)


@dataclass
class LossConfig:
    kind: str = "IR"
    lam: float = 0.0
    softmax: SoftmaxParams = field(default_factory=SoftmaxParams)
    exact: bool = False
    la_neighbors: NeighborSets | None = None

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ("IR", "LA"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.kind == "LA" and self.la_neighbors is not None and not self.la_neighbors.background:
            raise ValueError("LA needs a non-empty background set")


@dataclass
class DegenerateCounter:
    """Counts LA steps whose close-and-background intersection came up empty."""

    count: int = 0


DEGENERATE = DegenerateCounter()


def bank_logits(e: Tensor, bank: MemoryBank, temperature: float) -> Tensor:
    """``(B, D) -> (B, N)`` scaled dot products against the (constant) bank."""
    return ad.scalar_mul(ad.matmul(e, bank.rows.T), 1.0 / temperature)


def masked_logsumexp(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise ``log sum_{j in mask} exp(logits_j)``; every row needs one member."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ad.ShapeError("masked-logsumexp", logits.shape, mask.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("masked-logsumexp: empty row in mask")
    shift = np.where(mask, logits.data, -np.inf).max(axis=-1, keepdims=True)
    # masked-out entries are pinned to 0 so exp cannot overflow; they carry no gradient anyway
    offset = np.where(mask, -shift, -logits.data)
    shifted = ad.add(logits, offset)
    total = ad.sum(ad.mul(ad.exp(shifted), mask.astype(np.float64)), axis=-1)
    return ad.add(ad.log(total), shift[..., 0])


def _onehot(indices: np.ndarray, n: int) -> np.ndarray:
    m = np.zeros((indices.size, n), dtype=bool)
    m[np.arange(indices.size), indices] = True
    return m


def _check_indices(indices, n: int) -> np.ndarray:
    indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise IndexError(f"video index out of range for bank of {n}")
    return indices


def ir_nll(indices, e: Tensor, bank: MemoryBank, softmax: SoftmaxParams, exact: bool = True,
           rng: np.random.Generator | None = None) -> Tensor:
    """Per-row ``-log P(i | e)``, shape ``(B,)``."""
    n = bank.count
    indices = _check_indices(indices, n)
    logits = bank_logits(e, bank, softmax.temperature)
    own = masked_logsumexp(logits, _onehot(indices, n))
    if exact:
        return ad.sub(masked_logsumexp(logits, np.ones(logits.shape, dtype=bool)), own)
    q = softmax.resolve_q(n)
    rng = rng if rng is not None else np.random.default_rng()
    subset = np.zeros(logits.shape, dtype=bool)
    for b in range(indices.size):
        subset[b, sample_subset(n, q, rng)] = True
    denom = ad.add(masked_logsumexp(logits, subset), np.log(n / q))
    return ad.sub(denom, own)


def neighbor_masks(indices, close_labels: np.ndarray, background: np.ndarray,
                   n: int) -> tuple[np.ndarray, np.ndarray]:
    """Numerator (close and background) and denominator (background) masks.

    ``close_labels`` holds a cluster id per bank row; ``background`` is the
    ``(N, k)`` neighbor table. An empty intersection falls back to ``{i}``.
    """
    indices = _check_indices(indices, n)
    bg = np.zeros((indices.size, n), dtype=bool)
    bg[np.arange(indices.size)[:, None], background[indices]] = True
    close = close_labels[None, :] == close_labels[indices][:, None]
    num = close & bg
    empty = ~num.any(axis=1)
    if empty.any():
        DEGENERATE.count += int(empty.sum())
        logger.warning("LA: empty close/background intersection for %d rows; using self term",
                       int(empty.sum()))
        num[np.flatnonzero(empty), indices[empty]] = True
    return num, bg | num


def la_nll(indices, e: Tensor, bank: MemoryBank, softmax: SoftmaxParams,
           numerator_mask: np.ndarray, denominator_mask: np.ndarray) -> Tensor:
    """Per-row ``-log P(C and B | e) / P(B | e)``, shape ``(B,)``."""
    _check_indices(indices, bank.count)
    logits = bank_logits(e, bank, softmax.temperature)
    num = masked_logsumexp(logits, numerator_mask)
    den = masked_logsumexp(logits, denominator_mask)
    return ad.scalar_mul(ad.sub(num, den), -1.0)


def _sets_to_masks(i: int, sets: NeighborSets, n: int) -> tuple[np.ndarray, np.ndarray]:
    bg = np.zeros((1, n), dtype=bool)
    bg[0, sorted(sets.background)] = True
    inter = sorted(set(sets.close) & set(sets.background))
    num = np.zeros((1, n), dtype=bool)
    if inter:
        num[0, inter] = True
    else:
        DEGENERATE.count += 1
        logger.warning("LA: empty close/background intersection for video %d; using self term", i)
        num[0, i] = True
    return num, bg | num


def _with_reg(nll: Tensor, lam: float, theta_norm_sq) -> Tensor:
    if theta_norm_sq is None or lam == 0.0:
        return nll
    return ad.add(nll, ad.scalar_mul(theta_norm_sq, lam))


def _as_row(e) -> Tensor:
    if not isinstance(e, Tensor):
        e = Tensor(e)
    return ad.reshape(e, (1, e.shape[-1]))


def ir_loss(i: int, e, bank: MemoryBank, cfg: LossConfig, theta_norm_sq=None,
            rng: np.random.Generator | None = None) -> Tensor:
    """``-log P(i | e) + lam * |theta|^2`` for a single embedding ``e`` of shape ``(D,)``."""
    if cfg.kind != "IR":
        raise ValueError("ir_loss needs an IR config")
    nll = ir_nll([i], _as_row(e), bank, cfg.softmax, cfg.exact, rng)
    return _with_reg(ad.reshape(nll, ()), cfg.lam, theta_norm_sq)


def la_loss(i: int, e, bank: MemoryBank, cfg: LossConfig, theta_norm_sq=None) -> Tensor:
    if cfg.kind != "LA" or cfg.la_neighbors is None:
        raise ValueError("la_loss needs an LA config with neighbor sets")
    if not cfg.la_neighbors.background:
        raise ValueError("LA needs a non-empty background set")
    num, den = _sets_to_masks(i, cfg.la_neighbors, bank.count)
    nll = la_nll([i], _as_row(e), bank, cfg.softmax, num, den)
    return _with_reg(ad.reshape(nll, ()), cfg.lam, theta_norm_sq)


def regularizer(parameters: Iterable[Tensor] | dict[str, Tensor]) -> Tensor:
    """Sum of squares over all trainable parameters."""
    if isinstance(parameters, dict):
        parameters = parameters.values()
    terms = [ad.sum(ad.mul(p, p)) for p in parameters]
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total
