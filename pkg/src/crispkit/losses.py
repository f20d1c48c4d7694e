"""Ground-level/aerial contrastive objectives with analytical gradients.

Four objectives share one core: a temperature-scaled cosine similarity matrix
between L2-normalized view embeddings, turned into a two-direction softmax
cross-entropy. Gradients are returned with respect to the raw
(pre-normalization) embeddings so encoder backprop can chain straight
through.

* standard: one-to-one pairing, symmetric mean of the two directions.
* augmented: the standard objective fed augmented aerial rasters; the
  augmentation itself lives in :func:`augment_aerial`.
* many-to-one: every ground/aerial pair within a co-location radius counts
  as positive; the denominator enumerates the positive-link multiset
  literally, so an aerial view shared by several ground views is counted
  once per link (``dedupe_denominator`` collapses it to unique views).
* parameterized: sigmoid-gated mix of the two directions with a learned
  scalar.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from crispkit import backend
from crispkit.embedding import (
    EmbeddingBatch,
    normalization_backward,
    normalize_rows_with_grad,
    softmax_nll_rows,
)
from crispkit.errors import (
    CropLargerThanImageError,
    DimensionMismatchError,
    EmptyTargetRowError,
    InvalidCoordinateError,
    MissingCoordinatesError,
    NonBijectivePairingError,
    NonPositiveTemperatureError,
)

DEFAULT_LOG_INV_TEMPERATURE = 2.659


def resolve_tau(tau: Optional[float] = None, log_inv_temperature: Optional[float] = None) -> float:
    """Resolve the softmax temperature divisor.

    The configured scalar in the training recipe is a log-inverse-temperature
    t with effective divisor tau = exp(-t) (the CLIP logit-scale convention,
    so the stock value 2.659 gives tau ~ 0.070). A direct ``tau`` wins when
    both are given.
    """
    if tau is None:
        t = DEFAULT_LOG_INV_TEMPERATURE if log_inv_temperature is None else log_inv_temperature
        tau = float(np.exp(-t))
    if not tau > 0:
        raise NonPositiveTemperatureError(f"temperature divisor must be > 0, got {tau}")
    return float(tau)


def _check_coords(coords, n_items, what):
    if coords is None:
        return None
    arr = np.asarray(coords, dtype=np.float64)
    if arr.shape != (n_items, 2):
        raise DimensionMismatchError(
            f"{what} coords shape {arr.shape}, expected ({n_items}, 2)"
        )
    if not np.isfinite(arr).all():
        raise InvalidCoordinateError(f"{what} coords contain non-finite values")
    if (np.abs(arr[:, 0]) > 90).any() or (np.abs(arr[:, 1]) > 180).any():
        raise InvalidCoordinateError(f"{what} coords outside [-90,90]x[-180,180]")
    return arr


@dataclass(frozen=True)
class PairedBatch:
    """Paired ground-level and aerial embedding batches.

    ``pair_index[i]`` is the aerial row paired with ground row i; several
    ground rows may share one aerial row. Coordinates (lat, lon in decimal
    degrees, one row per item) are only required by the many-to-one
    objective.
    """

    gl: EmbeddingBatch
    a: EmbeddingBatch
    pair_index: np.ndarray
    gl_coords: Optional[np.ndarray] = None
    a_coords: Optional[np.ndarray] = None

    def __post_init__(self):
        pair = np.asarray(self.pair_index, dtype=np.int64)
        if pair.shape != (self.gl.n_items,):
            raise DimensionMismatchError(
                f"pair_index length {pair.shape} != n_gl {self.gl.n_items}"
            )
        if (pair < 0).any() or (pair >= self.a.n_items).any():
            raise NonBijectivePairingError("pair_index out of aerial range")
        object.__setattr__(self, "pair_index", pair)
        object.__setattr__(
            self, "gl_coords", _check_coords(self.gl_coords, self.gl.n_items, "ground")
        )
        object.__setattr__(
            self, "a_coords", _check_coords(self.a_coords, self.a.n_items, "aerial")
        )

    @property
    def n_gl(self) -> int:
        return self.gl.n_items

    @property
    def n_a(self) -> int:
        return self.a.n_items

    def has_coords(self) -> bool:
        return self.gl_coords is not None and self.a_coords is not None


@dataclass(frozen=True)
class LossWeight:
    """Unconstrained scalar gate; the mixing coefficient is sigmoid(w)."""

    w: float = 0.0

    def mix(self) -> float:
        return float(expit(self.w))


@dataclass(frozen=True)
class LossParts:
    l_gl: float
    l_a: float


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad_gl: np.ndarray
    grad_a: np.ndarray
    parts: LossParts
    grad_w: Optional[float] = None


def build_positive_mask(gl_coords, a_coords, pair_index, radius_m: float) -> np.ndarray:
    """Boolean (n_gl, n_a) mask of contrastive positives.

    Entry (i, k) is True when aerial item k is ground item i's paired view or
    the two items lie within ``radius_m`` meters (closed ball, great-circle
    distance). Raises EmptyTargetRowError if some aerial item ends up with no
    positive ground item, since both loss directions need nonempty positive
    sets.
    """
    if gl_coords is None or a_coords is None:
        raise MissingCoordinatesError("positive mining needs ground and aerial coordinates")
    gl_coords = _check_coords(gl_coords, np.asarray(gl_coords).shape[0], "ground")
    a_coords = _check_coords(a_coords, np.asarray(a_coords).shape[0], "aerial")
    if radius_m < 0:
        raise ValueError("radius_m must be >= 0")
    pair = np.asarray(pair_index, dtype=np.int64)
    dist = backend.pairwise_haversine_m(
        gl_coords[:, 0], gl_coords[:, 1], a_coords[:, 0], a_coords[:, 1]
    )
    mask = dist <= radius_m
    mask[np.arange(pair.shape[0]), pair] = True
    empty_cols = ~mask.any(axis=0)
    if empty_cols.any():
        raise EmptyTargetRowError(
            f"aerial item {int(np.argmax(empty_cols))} has no positive ground item"
        )
    return mask


def _bijection_or_raise(batch: PairedBatch) -> None:
    if batch.n_gl != batch.n_a:
        raise NonBijectivePairingError(
            f"{batch.n_gl} ground vs {batch.n_a} aerial items; "
            "use many_to_one_crisp_loss for shared aerial views"
        )
    counts = np.bincount(batch.pair_index, minlength=batch.n_a)
    if (counts != 1).any():
        raise NonBijectivePairingError(
            "pair_index is not one-to-one; use many_to_one_crisp_loss"
        )


def _similarity_core(batch: PairedBatch, tau: float):
    if batch.gl.dim != batch.a.dim:
        raise DimensionMismatchError(
            f"embedding dim mismatch: {batch.gl.dim} vs {batch.a.dim}"
        )
    gl_unit, gl_norms = normalize_rows_with_grad(batch.gl.vectors)
    a_unit, a_norms = normalize_rows_with_grad(batch.a.vectors)
    scaled = (gl_unit @ a_unit.T) / tau
    return gl_unit, gl_norms, a_unit, a_norms, scaled


def _standard_directions(batch: PairedBatch, scaled: np.ndarray):
    n = batch.n_gl
    row_mask = np.zeros_like(scaled)
    row_mask[np.arange(n), batch.pair_index] = 1.0
    l_gl, d_gl = softmax_nll_rows(scaled, row_mask)
    l_a, d_a_t = softmax_nll_rows(scaled.T, row_mask.T)
    return l_gl, l_a, d_gl, d_a_t.T


def _multiset_directions(scaled: np.ndarray, mask: np.ndarray):
    """Literal link-multiset evaluation of the two many-to-one directions.

    The denominator of each direction runs over every positive (ground,
    aerial) link, so views referenced by several links are counted once per
    link. Implemented by expanding the score matrix to one column per link
    and feeding the plain row softmax; materializes (n_items x n_links),
    which is fine at in-batch scale.
    """
    link_g, link_a = np.nonzero(mask)
    n_gl, n_a = mask.shape

    expanded = scaled[:, link_a]
    exp_mask = link_g[None, :] == np.arange(n_gl)[:, None]
    l_gl, grad_exp = softmax_nll_rows(expanded, exp_mask)
    d_gl = np.zeros_like(scaled)
    np.add.at(d_gl, (slice(None), link_a), grad_exp)

    expanded_t = scaled.T[:, link_g]
    exp_mask_t = link_a[None, :] == np.arange(n_a)[:, None]
    l_a, grad_exp_t = softmax_nll_rows(expanded_t, exp_mask_t)
    d_a_t = np.zeros_like(scaled.T)
    np.add.at(d_a_t, (slice(None), link_g), grad_exp_t)

    return l_gl, l_a, d_gl, d_a_t.T


def _dedupe_directions(scaled: np.ndarray, mask: np.ndarray):
    weights = mask.astype(np.float64)
    l_gl, d_gl = softmax_nll_rows(scaled, weights)
    l_a, d_a_t = softmax_nll_rows(scaled.T, weights.T)
    return l_gl, l_a, d_gl, d_a_t.T


def _assemble(batch, tau, core, directions, w_gl, w_a, grad_w=None) -> LossResult:
    gl_unit, gl_norms, a_unit, a_norms, _ = core
    l_gl, l_a, d_gl, d_a = directions
    loss = w_gl * l_gl + w_a * l_a
    d_scaled = w_gl * d_gl + w_a * d_a
    g_gl_unit = (d_scaled @ a_unit) / tau
    g_a_unit = (d_scaled.T @ gl_unit) / tau
    grad_gl = normalization_backward(g_gl_unit, gl_unit, gl_norms)
    grad_a = normalization_backward(g_a_unit, a_unit, a_norms)
    return LossResult(
        loss=float(loss),
        grad_gl=grad_gl,
        grad_a=grad_a,
        parts=LossParts(l_gl=float(l_gl), l_a=float(l_a)),
        grad_w=grad_w,
    )


def standard_crisp_loss(batch: PairedBatch, tau: Optional[float] = None) -> LossResult:
    """Symmetric contrastive loss over a one-to-one paired batch.

    Each direction is the mean negative log-softmax of the paired similarity
    against all in-batch alternatives; the total is the unweighted mean of
    the two directions.
    """
    tau = resolve_tau(tau)
    _bijection_or_raise(batch)
    core = _similarity_core(batch, tau)
    directions = _standard_directions(batch, core[4])
    return _assemble(batch, tau, core, directions, 0.5, 0.5)


def many_to_one_crisp_loss(
    batch: PairedBatch,
    tau: Optional[float] = None,
    radius_m: float = 250.0,
    dedupe_denominator: bool = False,
) -> LossResult:
    """Multi-positive contrastive loss with co-location mining.

    All ground/aerial pairs within ``radius_m`` meters are treated as
    positives (plus each item's own pair). With ``dedupe_denominator`` the
    normalization runs over unique in-batch views instead of the literal
    positive-link multiset.
    """
    tau = resolve_tau(tau)
    if not batch.has_coords():
        raise MissingCoordinatesError("many-to-one objective needs per-item coordinates")
    mask = build_positive_mask(batch.gl_coords, batch.a_coords, batch.pair_index, radius_m)
    core = _similarity_core(batch, tau)
    if dedupe_denominator:
        directions = _dedupe_directions(core[4], mask)
    else:
        directions = _multiset_directions(core[4], mask)
    return _assemble(batch, tau, core, directions, 0.5, 0.5)


def parameterized_crisp_loss(
    batch: PairedBatch, tau: Optional[float] = None, weight: LossWeight = LossWeight(0.0)
) -> LossResult:
    """Sigmoid-gated mix of the two directional losses.

    loss = mix * l_gl + (1 - mix) * l_a with mix = sigmoid(w); grad_w follows
    from the sigmoid derivative. With w = 0 this reproduces the standard
    objective exactly.
    """
    tau = resolve_tau(tau)
    _bijection_or_raise(batch)
    core = _similarity_core(batch, tau)
    directions = _standard_directions(batch, core[4])
    mix = weight.mix()
    l_gl, l_a = directions[0], directions[1]
    grad_w = mix * (1.0 - mix) * (l_gl - l_a)
    return _assemble(batch, tau, core, directions, mix, 1.0 - mix, grad_w=float(grad_w))


# aerial raster augmentation


@dataclass(frozen=True)
class AugmentParams:
    """One concrete draw of the aerial augmentation pipeline."""

    top: int
    left: int
    crop_hw: int
    hflip: bool
    vflip: bool
    quarter_turns: int


def _check_raster(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionMismatchError(f"raster must be (channels, h, w), got {arr.shape}")
    return arr


def draw_augment_params(image_hw, crop_hw: int, rng: np.random.Generator) -> AugmentParams:
    """Draw crop offsets, flips and rotation from a caller-owned generator."""
    h, w = image_hw
    if crop_hw < 1 or crop_hw > h or crop_hw > w:
        raise CropLargerThanImageError(f"crop {crop_hw} does not fit in ({h}, {w})")
    top = int(rng.integers(0, h - crop_hw + 1))
    left = int(rng.integers(0, w - crop_hw + 1))
    hflip = bool(rng.integers(0, 2))
    vflip = bool(rng.integers(0, 2))
    quarter_turns = int(rng.integers(0, 4))
    return AugmentParams(top, left, crop_hw, hflip, vflip, quarter_turns)


def apply_augment(image, params: AugmentParams) -> np.ndarray:
    """Crop, flip, and rotate a (channels, h, w) raster per the drawn params."""
    arr = _check_raster(image)
    h, w = arr.shape[1], arr.shape[2]
    c = params.crop_hw
    if c < 1 or params.top < 0 or params.left < 0 or params.top + c > h or params.left + c > w:
        raise CropLargerThanImageError(f"crop {c} at ({params.top}, {params.left}) exceeds ({h}, {w})")
    out = arr[:, params.top : params.top + c, params.left : params.left + c]
    if params.hflip:
        out = out[:, :, ::-1]
    if params.vflip:
        out = out[:, ::-1, :]
    if params.quarter_turns % 4:
        out = np.rot90(out, k=params.quarter_turns % 4, axes=(1, 2))
    return np.ascontiguousarray(out)


def augment_aerial(image, rng: np.random.Generator, crop_hw: int) -> np.ndarray:
    """Random square crop, 50% horizontal/vertical flips, random 90-degree turn.

    Deterministic given the generator state; all randomness comes from ``rng``.
    """
    arr = _check_raster(image)
    params = draw_augment_params((arr.shape[1], arr.shape[2]), crop_hw, rng)
    return apply_augment(arr, params)
