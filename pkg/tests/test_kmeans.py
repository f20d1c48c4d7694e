import numpy as np
import pytest
from sklearn.cluster import KMeans as SkKMeans

from crispkit.errors import TooFewPointsError
from crispkit.kmeans import KMeansConfig, kmeans_pp


def two_blobs(rng, n_per=40, d=3, separation=12.0):
    a = rng.standard_normal((n_per, d)) + separation
    b = rng.standard_normal((n_per, d)) - separation
    points = np.vstack([a, b])
    membership = np.array([0] * n_per + [1] * n_per)
    return points, membership


class TestKMeansPP:
    def test_k_equals_n_gives_zero_inertia(self):
        rng = np.random.default_rng(0)
        points = rng.standard_normal((12, 4))
        labels, centers, inertia = kmeans_pp(points, KMeansConfig(k=12, seed=1))
        assert inertia == 0.0
        assert sorted(labels.tolist()) == list(range(12))
        recovered = centers[labels]
        np.testing.assert_array_equal(recovered, points)

    def test_two_separated_blobs_found_across_seeds(self):
        rng = np.random.default_rng(1)
        points, membership = two_blobs(rng)
        for seed in range(10):
            labels, _, _ = kmeans_pp(points, KMeansConfig(k=2, seed=seed))
            side_a = labels[membership == 0]
            side_b = labels[membership == 1]
            assert len(set(side_a.tolist())) == 1
            assert len(set(side_b.tolist())) == 1
            assert side_a[0] != side_b[0]

    def test_inertia_nonincreasing_over_iterations(self):
        rng = np.random.default_rng(2)
        points = rng.standard_normal((200, 5))
        _, _, _, history = kmeans_pp(points, KMeansConfig(k=8, seed=3), return_history=True)
        assert all(a >= b - 1e-9 for a, b in zip(history, history[1:]))

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(3)
        points = rng.standard_normal((100, 4))
        a = kmeans_pp(points, KMeansConfig(k=5, seed=9))
        b = kmeans_pp(points, KMeansConfig(k=5, seed=9))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        assert a[2] == b[2]

    def test_final_assignment_is_fixed_point(self):
        rng = np.random.default_rng(4)
        points = rng.standard_normal((150, 3))
        labels, centers, _ = kmeans_pp(points, KMeansConfig(k=6, seed=5))
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        np.testing.assert_array_equal(labels, d2.argmin(axis=1))

    def test_inertia_close_to_sklearn(self):
        rng = np.random.default_rng(5)
        points = rng.standard_normal((300, 4))
        _, _, inertia = kmeans_pp(points, KMeansConfig(k=10, seed=6))
        sk = SkKMeans(n_clusters=10, n_init=10, random_state=0).fit(points)
        # single init, so only parity within a modest factor is expected
        assert inertia <= 1.25 * sk.inertia_

    def test_too_few_points(self):
        with pytest.raises(TooFewPointsError):
            kmeans_pp(np.zeros((3, 2)), KMeansConfig(k=4))

    def test_duplicate_points_handled(self):
        points = np.zeros((10, 2))
        labels, centers, inertia = kmeans_pp(points, KMeansConfig(k=3, seed=0))
        assert inertia == 0.0
        assert labels.shape == (10,)
