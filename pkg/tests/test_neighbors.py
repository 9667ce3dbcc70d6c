import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vie.embedding import MemoryBank
from vie.neighbors import (background_matrix, background_neighbors, close_neighbors, default_k, default_m,
                           kmeans_fit, lloyd_objective)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def three_direction_bank(seed):
    rng = np.random.default_rng(seed)
    centers = np.eye(3)
    x = np.repeat(centers, 4, axis=0) + 0.15 * rng.standard_normal((12, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def brute_force_partition(x, m):
    """Best labeling over all m**n assignments, by total norm of cluster sums."""
    n = len(x)
    labelings = np.array(list(itertools.product(range(m), repeat=n)), dtype=np.int8)
    score = np.zeros(len(labelings))
    for c in range(m):
        sums = (labelings == c).astype(np.float64) @ x
        score += np.linalg.norm(sums, axis=1)
    return labelings[int(np.argmax(score))]


def same_partition(a, b):
    pairs_a = np.equal.outer(a, a)
    pairs_b = np.equal.outer(b, b)
    return np.array_equal(pairs_a, pairs_b)


def sort_oracle(x, i, k):
    # self first, then decreasing dot, ties by lower index
    keys = [(j != i, -float(np.dot(x[j], x[i])), j) for j in range(len(x))]
    return {key[2] for key in sorted(keys)[:k]}


class TestKMeans:
    def test_m_equals_n_gives_permutation(self):
        x = unit_rows(np.random.default_rng(0), 10, 4)
        a = kmeans_fit(MemoryBank(x), 10, seed=3)
        assert sorted(a.labels.tolist()) == list(range(10))
        for i in range(10):
            assert close_neighbors(a, i) == {i}

    def test_single_cluster(self):
        x = unit_rows(np.random.default_rng(1), 9, 3)
        a = kmeans_fit(x, 1)
        assert np.all(a.labels == 0)
        mean = x.sum(0) / np.linalg.norm(x.sum(0))
        np.testing.assert_allclose(a.centroids[0], mean, atol=1e-12)
        assert close_neighbors(a, 4) == set(range(9))

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_exhaustive_partition(self, seed):
        x = three_direction_bank(seed)
        best = brute_force_partition(x, 3)
        a = kmeans_fit(x, 3, seed=seed)
        assert same_partition(a.labels, best)
        for i in range(12):
            assert close_neighbors(a, i) == set(np.flatnonzero(best == best[i]).tolist())

    def test_converged_labels_are_a_fixpoint(self):
        rng = np.random.default_rng(77)
        for _ in range(20):
            x = unit_rows(rng, 40, 3)
            a = kmeans_fit(x, 4, seed=int(rng.integers(1000)), max_iters=200)
            assert a.iteration_count < 200
            assert np.array_equal(np.argmax(x @ a.centroids.T, axis=1), a.labels)

    def test_rejects_bad_m(self):
        x = unit_rows(np.random.default_rng(2), 5, 3)
        with pytest.raises(ValueError):
            kmeans_fit(x, 6)
        with pytest.raises(ValueError):
            kmeans_fit(x, 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 64), st.integers(1, 8))
    def test_objective_monotone_and_deterministic(self, seed, n, m):
        m = min(m, n)
        x = unit_rows(np.random.default_rng(seed), n, 5)
        a = kmeans_fit(x, m, seed=seed)
        assert np.all(np.diff(a.objective_trace) >= -1e-9)
        assert np.all(np.bincount(a.labels, minlength=m) > 0)
        b = kmeans_fit(x, m, seed=seed)
        assert np.array_equal(a.labels, b.labels)
        assert a.centroids.tobytes() == b.centroids.tobytes()

    def test_to_text(self):
        a = kmeans_fit(np.eye(3), 3)
        lines = a.to_text().splitlines()
        assert len(lines) == 3 and lines[0].split()[0] == "0"


class TestBackground:
    def test_worked_example(self):
        x = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0], [-1.0, 0.0]])
        assert background_neighbors(x, 0, 2) == {0, 1}

    def test_extremes(self):
        x = unit_rows(np.random.default_rng(3), 7, 3)
        assert background_neighbors(x, 2, 1) == {2}
        assert background_neighbors(x, 2, 7) == set(range(7))
        with pytest.raises(ValueError):
            background_neighbors(x, 0, 8)

    def test_self_wins_duplicate_rows(self):
        x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        assert background_neighbors(x, 1, 1) == {1}
        assert background_neighbors(x, 1, 2) == {0, 1}

    def test_agrees_with_full_sort_on_100_banks(self):
        rng = np.random.default_rng(100)
        for _ in range(100):
            n = int(rng.integers(1, 65))
            x = unit_rows(rng, n, int(rng.integers(2, 6)))
            if rng.random() < 0.3:  # force exact ties
                x[rng.integers(n, size=n // 2)] = x[0]
            k = int(rng.integers(1, n + 1))
            i = int(rng.integers(n))
            assert background_neighbors(x, i, k) == sort_oracle(x, i, k)
            table = background_matrix(x, k)
            assert table[i, 0] == i
            assert set(table[i].tolist()) == sort_oracle(x, i, k)

    def test_recomputation_identical(self):
        x = unit_rows(np.random.default_rng(4), 30, 4)
        assert np.array_equal(background_matrix(x, 5), background_matrix(x, 5))


def test_default_sizes():
    assert default_m(480) == 120 and default_k(480) == 60
    assert default_m(10) == 2 and default_k(3) == 1
