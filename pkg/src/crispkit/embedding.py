"""Embedding primitives: normalization, cosine similarity, softmax cross-entropy.

Everything here is double precision and returns analytical gradients where a
loss is involved, so downstream objectives can be finite-difference checked
to tight tolerances.
"""

from dataclasses import dataclass

import numpy as np

from crispkit import backend
from crispkit.errors import (
    DimensionMismatchError,
    EmptyTargetRowError,
    ZeroVectorError,
)

_ZERO_NORM_FLOOR = 1e-12


def _as_matrix(vectors) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class EmbeddingBatch:
    """A batch of view embeddings with one opaque id per row."""

    vectors: np.ndarray
    item_ids: tuple = ()

    def __post_init__(self):
        arr = _as_matrix(self.vectors)
        object.__setattr__(self, "vectors", arr)
        n = arr.shape[0]
        if n < 1 or arr.shape[1] < 1:
            raise DimensionMismatchError("embedding batch must be at least 1x1")
        if not np.isfinite(arr).all():
            raise ValueError("embedding vectors must be finite")
        ids = tuple(self.item_ids) if self.item_ids else tuple(f"item{i}" for i in range(n))
        if len(ids) != n:
            raise DimensionMismatchError(
                f"{len(ids)} item ids for {n} rows"
            )
        if len(set(ids)) != n:
            raise DimensionMismatchError("item ids must be unique within a batch")
        object.__setattr__(self, "item_ids", ids)

    @property
    def n_items(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise cosine similarities plus the temperature divisor to apply."""

    values: np.ndarray
    temperature_divisor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "values", _as_matrix(self.values))
        if not self.temperature_divisor > 0:
            raise ValueError("temperature_divisor must be > 0")

    def scaled(self) -> np.ndarray:
        return self.values / self.temperature_divisor


def row_norms(vectors: np.ndarray) -> np.ndarray:
    return np.sqrt((np.asarray(vectors, dtype=np.float64) ** 2).sum(axis=1))


def l2_normalize(batch: EmbeddingBatch) -> EmbeddingBatch:
    """Scale every row to unit Euclidean norm, preserving direction.

    Raises ZeroVectorError if any row norm is below 1e-12.
    """
    norms = row_norms(batch.vectors)
    if (norms < _ZERO_NORM_FLOOR).any():
        bad = int(np.argmax(norms < _ZERO_NORM_FLOOR))
        raise ZeroVectorError(f"row {bad} has norm {norms[bad]:.3e}")
    return EmbeddingBatch(batch.vectors / norms[:, None], batch.item_ids)


def normalize_rows_with_grad(vectors: np.ndarray):
    """Row-normalize a raw matrix and return what backprop needs.

    Returns (unit, norms); the gradient hop is done by
    :func:`normalization_backward`.
    """
    vectors = _as_matrix(vectors)
    norms = row_norms(vectors)
    if (norms < _ZERO_NORM_FLOOR).any():
        bad = int(np.argmax(norms < _ZERO_NORM_FLOOR))
        raise ZeroVectorError(f"row {bad} has norm {norms[bad]:.3e}")
    return vectors / norms[:, None], norms


def normalization_backward(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. unit rows back to the raw (pre-norm) rows.

    For u = v/|v|:  dL/dv = (g - (g . u) u) / |v|.
    """
    inner = (grad_unit * unit).sum(axis=1, keepdims=True)
    return (grad_unit - inner * unit) / norms[:, None]


def cosine_similarity_matrix(gl: EmbeddingBatch, a: EmbeddingBatch) -> SimilarityMatrix:
    """Cosine similarity between every ground-level row and every aerial row."""
    if gl.dim != a.dim:
        raise DimensionMismatchError(f"dim mismatch: {gl.dim} vs {a.dim}")
    gl_unit, _ = normalize_rows_with_grad(gl.vectors)
    a_unit, _ = normalize_rows_with_grad(a.vectors)
    return SimilarityMatrix(gl_unit @ a_unit.T, temperature_divisor=1.0)


def softmax_nll_rows(scaled, target_mask):
    """Mean per-row negative log-softmax, averaged over each row's positives.

    Args:
        scaled: (R, C) score matrix, already temperature-scaled.
        target_mask: (R, C) boolean or nonnegative weight matrix selecting
            each row's positives. Weights are normalized within the row.

    Returns:
        (loss, grad) with grad = d(loss)/d(scaled). The softmax in each row
        runs over the full row and is stabilized by max subtraction.

    Raises EmptyTargetRowError when a row has no positive mass.
    """
    scaled = _as_matrix(scaled)
    mask = np.asarray(target_mask, dtype=np.float64)
    if mask.shape != scaled.shape:
        raise DimensionMismatchError(
            f"mask shape {mask.shape} != scores shape {scaled.shape}"
        )
    if (mask < 0).any():
        raise ValueError("target_mask weights must be nonnegative")
    row_mass = mask.sum(axis=1)
    if (row_mass <= 0).any():
        bad = int(np.argmax(row_mass <= 0))
        raise EmptyTargetRowError(f"row {bad} has no positive entry")
    weights = mask / row_mass[:, None]
    return backend.softmax_nll_core(scaled, weights)
