"""Close neighbors (k-means clusters on the sphere) and background neighbors (kNN).

Both work directly on bank rows, which are unit vectors, so similarity is
the plain dot product throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ClusterAssignment:
    centroids: np.ndarray
    labels: np.ndarray
    iteration_count: int
    objective_trace: list[float]

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def to_text(self) -> str:
        return "".join(f"{i} {int(lbl)}\n" for i, lbl in enumerate(self.labels))


@dataclass(frozen=True)
class NeighborSets:
    close: frozenset[int]
    background: frozenset[int]


def _rows(bank) -> np.ndarray:
    return np.asarray(getattr(bank, "rows", bank), dtype=np.float64)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(n > 0, v / np.where(n > 0, n, 1.0), v)


def _seed_centroids(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    # k-means++ with cosine distance 1 - x.c
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = 1.0 - x @ x[chosen[0]]
    for _ in range(1, m):
        w = np.clip(closest, 0.0, None)
        w[chosen] = 0.0
        total = w.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=w / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        closest = np.minimum(closest, 1.0 - x @ x[nxt])
    return x[chosen].copy()


def _repair_empty(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray, m: int) -> np.ndarray:
    """Move the point farthest from its own centroid into each empty cluster."""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=m)
    for c in np.flatnonzero(counts == 0):
        fit = np.einsum("ij,ij->i", x, centroids[labels])
        fit[counts[labels] <= 1] = np.inf  # never empty another cluster
        j = int(np.argmin(fit))  # ties: lowest index
        counts[labels[j]] -= 1
        labels[j] = c
        counts[c] = 1
        centroids[c] = x[j]
    return labels


def lloyd_objective(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(np.einsum("ij,ij->", x, centroids[labels]))


def kmeans_fit(bank, m: int, seed: int = 0, max_iters: int = 50) -> ClusterAssignment:
    """Spherical Lloyd iterations: assign by largest dot, recenter to the normalized mean."""
    x = _rows(bank)
    n = x.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"cluster count m={m} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(x, m, rng)
    labels = np.full(n, -1, dtype=np.int64)
    trace: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        new = np.argmax(x @ centroids.T, axis=1)
        new = _repair_empty(x, new, centroids, m)
        sums = np.zeros_like(centroids)
        np.add.at(sums, new, x)
        dead = np.linalg.norm(sums, axis=1) == 0
        if dead.any():  # members cancel exactly: fall back to the first member
            for c in np.flatnonzero(dead):
                sums[c] = x[np.flatnonzero(new == c)[0]]
        centroids = _unit(sums)
        trace.append(lloyd_objective(x, new, centroids))
        if np.array_equal(new, labels):
            break
        labels = new
    return ClusterAssignment(centroids, labels, it, trace)


def close_neighbors(assign: ClusterAssignment, i: int) -> frozenset[int]:
    return frozenset(np.flatnonzero(assign.labels == assign.labels[i]).tolist())


def background_order(bank, i: int) -> np.ndarray:
    """All indices sorted by decreasing dot with row ``i``; ``i`` first, ties by index."""
    x = _rows(bank)
    scores = x @ x[i]
    scores[i] = np.inf
    return np.argsort(-scores, kind="stable")


def background_neighbors(bank, i: int, k: int) -> frozenset[int]:
    n = _rows(bank).shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    return frozenset(background_order(bank, i)[:k].tolist())


def background_matrix(bank, k: int) -> np.ndarray:
    """Row ``i`` holds the ``k`` background neighbors of ``i`` (self first)."""
    x = _rows(bank)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    # row by row rather than one x @ x.T: blocked matrix products can round
    # duplicate rows differently, which would break index tie-breaking
    return np.stack([background_order(x, i)[:k] for i in range(n)])


def default_m(n: int) -> int:
    # about a class-sized cluster count for the balanced synthetic sets
    return max(2, n // 4) if n >= 2 else 1


def default_k(n: int) -> int:
    return max(1, n // 8)
