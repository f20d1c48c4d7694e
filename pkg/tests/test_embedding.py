import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crispkit.embedding import (
    EmbeddingBatch,
    cosine_similarity_matrix,
    l2_normalize,
    softmax_nll_rows,
)
from crispkit.errors import (
    DimensionMismatchError,
    EmptyTargetRowError,
    ZeroVectorError,
)

from oracles import central_difference, cosine_matrix_oracle, softmax_nll_oracle


class TestL2Normalize:
    def test_three_four_five(self):
        out = l2_normalize(EmbeddingBatch(np.array([[3.0, 4.0]])))
        np.testing.assert_allclose(out.vectors, [[0.6, 0.8]], rtol=0, atol=1e-15)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        batch = l2_normalize(EmbeddingBatch(rng.standard_normal((5, 7))))
        again = l2_normalize(batch)
        np.testing.assert_allclose(again.vectors, batch.vectors, rtol=0, atol=1e-12)

    def test_unit_norms_against_row_loop(self):
        rng = np.random.default_rng(2)
        out = l2_normalize(EmbeddingBatch(rng.standard_normal((8, 16)) * 3.0))
        for row in out.vectors:
            norm = math.sqrt(sum(float(x) ** 2 for x in row))
            assert abs(norm - 1.0) < 1e-9

    def test_direction_preserved(self):
        v = np.array([[2.0, -1.0, 0.5]])
        out = l2_normalize(EmbeddingBatch(v))
        ratio = v[0] / out.vectors[0]
        assert np.allclose(ratio, ratio[0])
        assert ratio[0] > 0

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            l2_normalize(EmbeddingBatch(np.array([[1.0, 0.0], [0.0, 0.0]])))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DimensionMismatchError):
            EmbeddingBatch(np.eye(2), item_ids=("a", "a"))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingBatch(np.array([[1.0, float("nan")]]))


class TestCosineSimilarity:
    def test_orthonormal_identity(self):
        batch = EmbeddingBatch(np.eye(2))
        sim = cosine_similarity_matrix(batch, batch)
        np.testing.assert_allclose(sim.values, np.eye(2), atol=1e-15)

    def test_antipodal_diagonal(self):
        rng = np.random.default_rng(3)
        gl = rng.standard_normal((4, 6))
        sim = cosine_similarity_matrix(EmbeddingBatch(gl), EmbeddingBatch(-gl))
        np.testing.assert_allclose(np.diag(sim.values), -1.0, atol=1e-12)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(4)
        gl = rng.standard_normal((5, 7)) * 2.0
        a = rng.standard_normal((6, 7)) * 0.5
        sim = cosine_similarity_matrix(EmbeddingBatch(gl), EmbeddingBatch(a))
        np.testing.assert_allclose(sim.values, cosine_matrix_oracle(gl, a), atol=1e-12)

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(5)
        gl = EmbeddingBatch(rng.standard_normal((5, 4)))
        a = EmbeddingBatch(rng.standard_normal((7, 4)))
        forward = cosine_similarity_matrix(gl, a).values
        backward = cosine_similarity_matrix(a, gl).values
        np.testing.assert_allclose(forward, backward.T, atol=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        gl = rng.standard_normal((4, 5))
        a = rng.standard_normal((3, 5))
        base = cosine_similarity_matrix(EmbeddingBatch(gl), EmbeddingBatch(a)).values
        scaled_gl = gl.copy()
        scaled_gl[2] *= 17.5
        scaled = cosine_similarity_matrix(EmbeddingBatch(scaled_gl), EmbeddingBatch(a)).values
        np.testing.assert_allclose(scaled, base, atol=1e-9)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_similarity_matrix(EmbeddingBatch(np.eye(2)), EmbeddingBatch(np.eye(3)))

    def test_entries_in_range(self):
        rng = np.random.default_rng(7)
        sim = cosine_similarity_matrix(
            EmbeddingBatch(rng.standard_normal((10, 3))),
            EmbeddingBatch(rng.standard_normal((11, 3))),
        )
        assert sim.values.max() <= 1 + 1e-9
        assert sim.values.min() >= -1 - 1e-9


class TestSoftmaxNllRows:
    def test_single_element_row(self):
        loss, grad = softmax_nll_rows(np.array([[2.5]]), np.array([[1.0]]))
        assert loss == 0.0
        assert grad[0, 0] == 0.0

    def test_two_by_two_identity(self):
        loss, _ = softmax_nll_rows(np.eye(2), np.eye(2))
        expected = -math.log(math.e / (math.e + 1.0))
        assert abs(loss - expected) < 1e-12
        assert abs(loss - 0.313262) < 1e-6

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            scaled = rng.standard_normal((6, 6)) * 3.0
            mask = np.zeros((6, 6))
            for r in range(6):
                k = rng.integers(1, 4)
                mask[r, rng.choice(6, size=k, replace=False)] = 1.0
            loss, _ = softmax_nll_rows(scaled, mask)
            assert abs(loss - softmax_nll_oracle(scaled, mask)) < 1e-12

    def test_weighted_mask(self):
        rng = np.random.default_rng(9)
        scaled = rng.standard_normal((4, 5))
        mask = rng.uniform(0.0, 2.0, size=(4, 5))
        loss, _ = softmax_nll_rows(scaled, mask)
        assert abs(loss - softmax_nll_oracle(scaled, mask)) < 1e-12

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(100):
            rows = int(rng.integers(1, 6))
            cols = int(rng.integers(1, 7))
            scaled = rng.standard_normal((rows, cols)) * 2.0
            mask = np.zeros((rows, cols))
            for r in range(rows):
                k = int(rng.integers(1, cols + 1))
                mask[r, rng.choice(cols, size=k, replace=False)] = 1.0
            _, grad = softmax_nll_rows(scaled, mask)
            numeric = central_difference(lambda s: softmax_nll_rows(s, mask)[0], scaled)
            scale = max(np.abs(grad).max(), np.abs(numeric).max(), 1e-12)
            worst = max(worst, np.abs(grad - numeric).max() / scale)
        assert worst < 1e-5

    def test_stability_at_extreme_scores(self):
        scaled = np.array([[1000.0, -1000.0], [500.0, 499.0]])
        mask = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, grad = softmax_nll_rows(scaled, mask)
        assert np.isfinite(loss)
        assert np.isfinite(grad).all()

    def test_empty_row_rejected(self):
        with pytest.raises(EmptyTargetRowError):
            softmax_nll_rows(np.eye(2), np.array([[1.0, 0.0], [0.0, 0.0]]))

    @settings(max_examples=60, deadline=None)
    @given(
        rows=st.integers(1, 5),
        cols=st.integers(1, 6),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_loss_nonnegative(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        scaled = rng.standard_normal((rows, cols)) * 4.0
        mask = np.zeros((rows, cols))
        for r in range(rows):
            k = int(rng.integers(1, cols + 1))
            mask[r, rng.choice(cols, size=k, replace=False)] = 1.0
        loss, _ = softmax_nll_rows(scaled, mask)
        assert loss >= 0.0
        if cols == 1:
            assert loss == 0.0
