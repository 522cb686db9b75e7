import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rapgs.errors import InsufficientPointsError, ValidationError
from rapgs.neighbors import SIGMA_FLOOR, avg_knn_distance, build_knn, local_stats
from rapgs.parallel import threads


def brute_knn(pts, k):
    """O(N^2) oracle: full distance matrix, ties to the lower index."""
    pts = np.asarray(pts, dtype=np.float64)
    n = len(pts)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    cols = np.arange(n)
    for i in range(n):
        row = d[i].copy()
        row[i] = np.inf
        order = np.lexsort((cols, row))[:k]
        idx[i], dist[i] = order, row[order]
    return idx, dist


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.linalg.det(q))


class TestBuildKnn:
    def test_unit_square(self):
        pts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
        t = build_knn(pts, 2)
        np.testing.assert_array_equal(t.distances, np.ones((4, 2)))
        np.testing.assert_array_equal(t.indices, [[1, 2], [0, 3], [0, 3], [1, 2]])

    def test_collinear(self):
        t = build_knn([[0, 0, 0], [1, 0, 0], [3, 0, 0]], 1)
        np.testing.assert_array_equal(t.indices[:, 0], [1, 0, 1])
        np.testing.assert_array_equal(t.distances[:, 0], [1, 1, 2])

    def test_random_200_matches_oracle(self):
        pts = np.random.default_rng(0).uniform(size=(200, 3))
        t = build_knn(pts, 16)
        idx, dist = brute_knn(pts, 16)
        np.testing.assert_array_equal(t.indices, idx)
        np.testing.assert_allclose(t.distances, dist, rtol=1e-12)

    def test_integer_grid_ties(self):
        g = np.stack(np.meshgrid(*[np.arange(5.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
        t = build_knn(g, 10)
        idx, dist = brute_knn(g, 10)
        np.testing.assert_array_equal(t.indices, idx)
        np.testing.assert_array_equal(t.distances, dist)

    def test_duplicate_points(self):
        pts = np.zeros((6, 3))
        pts[5] = [1.0, 0, 0]
        t = build_knn(pts, 3)
        idx, _ = brute_knn(pts, 3)
        np.testing.assert_array_equal(t.indices, idx)

    def test_self_excluded(self):
        pts = np.random.default_rng(1).normal(size=(50, 3))
        t = build_knn(pts, 8)
        assert not (t.indices == np.arange(50)[:, None]).any()

    def test_too_few_points_padded(self):
        pts = np.random.default_rng(2).normal(size=(4, 3))
        t = build_knn(pts, 8)
        assert t.degenerate and t.valid == 3 and t.k == 8
        idx, dist = brute_knn(pts, 3)
        np.testing.assert_array_equal(t.indices[:, :3], idx)
        np.testing.assert_array_equal(t.indices[:, 3:], np.repeat(idx[:, -1:], 5, axis=1))
        np.testing.assert_allclose(avg_knn_distance(t), dist.mean(axis=1))

    def test_errors(self):
        with pytest.raises(InsufficientPointsError):
            build_knn(np.zeros((1, 3)), 4)
        with pytest.raises(ValidationError):
            build_knn(np.zeros((5, 3)), 0)

    def test_thread_count_irrelevant(self):
        pts = np.random.default_rng(3).normal(size=(9000, 3))
        with threads(1):
            a = build_knn(pts, 12)
        with threads(6):
            b = build_knn(pts, 12)
        assert a.indices.tobytes() == b.indices.tobytes()
        assert a.distances.tobytes() == b.distances.tobytes()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 300), st.integers(1, 20), st.integers(0, 10**6))
    def test_matches_oracle_property(self, n, k, seed):
        rng = np.random.default_rng(seed)
        # snap to a coarse lattice half the time to force ties
        pts = rng.uniform(-1, 1, (n, 3))
        if seed % 2:
            pts = np.round(pts * 4) / 4
        t = build_knn(pts, k)
        idx, dist = brute_knn(pts, min(k, n - 1))
        np.testing.assert_array_equal(t.indices[:, : t.valid], idx)
        np.testing.assert_allclose(t.distances[:, : t.valid], dist, rtol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6))
    def test_rigid_invariance(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(120, 3))
        moved = pts @ random_rotation(rng).T + rng.normal(size=3) * 10
        a, b = build_knn(pts, 8), build_knn(moved, 8)
        np.testing.assert_allclose(a.distances, b.distances, atol=1e-5)
        np.testing.assert_array_equal(np.sort(a.indices, 1), np.sort(b.indices, 1))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 15))
    def test_larger_k_extends(self, seed, k):
        pts = np.random.default_rng(seed).normal(size=(80, 3))
        small, big = build_knn(pts, k), build_knn(pts, k + 1)
        np.testing.assert_array_equal(big.indices[:, :k], small.indices)
        assert (big.distances[:, k] >= small.distances[:, k - 1]).all()


class TestAvgDistance:
    def test_unit_square(self):
        t = build_knn([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], 2)
        np.testing.assert_array_equal(avg_knn_distance(t), np.ones(4))

    def test_collinear(self):
        t = build_knn([[0, 0, 0], [1, 0, 0], [3, 0, 0]], 1)
        np.testing.assert_array_equal(avg_knn_distance(t), [1, 1, 2])

    def test_random_matches_oracle(self):
        pts = np.random.default_rng(4).uniform(size=(200, 3))
        _, dist = brute_knn(pts, 16)
        np.testing.assert_allclose(avg_knn_distance(build_knn(pts, 16)), dist.mean(1), rtol=1e-6)


class TestLocalStats:
    def test_constant_values(self):
        t = build_knn(np.random.default_rng(5).normal(size=(30, 3)), 5)
        mu, sd = local_stats(np.full(30, 3.5), t)
        np.testing.assert_array_equal(mu, 3.5)
        np.testing.assert_array_equal(sd, SIGMA_FLOOR)

    def test_collinear_row_index(self):
        t = build_knn([[0, 0, 0], [1, 0, 0], [3, 0, 0]], 1)
        mu, _ = local_stats(np.arange(3.0), t)
        np.testing.assert_array_equal(mu, [1, 0, 1])

    def test_random_matches_brute_force(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(150, 3))
        vals = rng.normal(size=(150, 4))
        idx, _ = brute_knn(pts, 10)
        mu, sd = local_stats(vals, build_knn(pts, 10))
        for i in range(150):
            g = vals[idx[i]]
            np.testing.assert_allclose(mu[i], g.mean(0), rtol=1e-6)
            np.testing.assert_allclose(sd[i], np.maximum(g.std(0), SIGMA_FLOOR), rtol=1e-6)

    def test_length_mismatch(self):
        t = build_knn(np.random.default_rng(7).normal(size=(10, 3)), 3)
        with pytest.raises(ValidationError):
            local_stats(np.zeros(9), t)
