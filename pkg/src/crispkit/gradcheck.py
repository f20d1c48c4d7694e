"""Finite-difference validation of the objective gradients.

Each instance draws random raw embeddings (and coordinates for the
many-to-one objective), computes the analytic gradients, and compares them
entry by entry against central differences of the loss. The per-instance
error is the largest entry deviation normalized by the largest gradient
magnitude across both sides, so near-zero entries do not inflate the score.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from crispkit import losses
from crispkit.embedding import EmbeddingBatch

CHECKED_OBJECTIVES = ("standard", "m2o", "par")


@dataclass
class GradCheckReport:
    objective: str
    instances: int
    max_rel_err: float
    max_w_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance and self.max_w_err < self.tolerance


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _random_batch(rng: np.random.Generator, objective: str, n: int, dim: int) -> losses.PairedBatch:
    # shared aerial views for roughly half of the many-to-one instances
    if objective == "m2o" and n >= 4 and rng.integers(0, 2):
        n_a = max(2, n - int(rng.integers(1, n // 2 + 1)))
        pair = np.concatenate([np.arange(n_a), rng.integers(0, n_a, size=n - n_a)])
        pair = rng.permutation(pair)
    else:
        n_a = n
        pair = rng.permutation(n)
    gl = rng.standard_normal((n, dim))
    a = rng.standard_normal((n_a, dim))
    if objective == "m2o":
        # a couple of tight spatial clusters so the radius mining fires
        centers = np.array([[36.0, -120.0], [36.5, -120.5], [36.001, -120.001]])
        gl_coords = centers[rng.integers(0, len(centers), size=n)]
        gl_coords = gl_coords + rng.standard_normal((n, 2)) * 1e-4
        a_coords = centers[rng.integers(0, len(centers), size=n_a)]
        a_coords = a_coords + rng.standard_normal((n_a, 2)) * 1e-4
    else:
        gl_coords = a_coords = None
    return losses.PairedBatch(
        gl=EmbeddingBatch(gl),
        a=EmbeddingBatch(a),
        pair_index=pair,
        gl_coords=gl_coords,
        a_coords=a_coords,
    )


def _loss_fn(objective: str, batch: losses.PairedBatch, tau: float,
             radius_m: float, weight: losses.LossWeight):
    if objective == "standard":
        return losses.standard_crisp_loss(batch, tau)
    if objective == "m2o":
        return losses.many_to_one_crisp_loss(batch, tau, radius_m)
    if objective == "par":
        return losses.parameterized_crisp_loss(batch, tau, weight)
    raise ValueError(f"unknown objective {objective!r}")


def _rebuild(batch: losses.PairedBatch, gl: np.ndarray, a: np.ndarray) -> losses.PairedBatch:
    return losses.PairedBatch(
        gl=EmbeddingBatch(gl, batch.gl.item_ids),
        a=EmbeddingBatch(a, batch.a.item_ids),
        pair_index=batch.pair_index,
        gl_coords=batch.gl_coords,
        a_coords=batch.a_coords,
    )


def check_objective(
    objective: str,
    n_instances: int = 50,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-5,
    tau: Optional[float] = None,
    radius_m: float = 250.0,
    corrupt_gradient: bool = False,
) -> GradCheckReport:
    """Compare analytic and central-difference gradients over random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_w = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(2, 17))
        dim = int(rng.integers(4, 33))
        inst_tau = tau if tau is not None else float(rng.uniform(0.05, 1.0))
        batch = _random_batch(rng, objective, n, dim)
        weight = losses.LossWeight(float(rng.uniform(-2.0, 2.0)))
        result = _loss_fn(objective, batch, inst_tau, radius_m, weight)

        analytic = np.concatenate([result.grad_gl.ravel(), result.grad_a.ravel()])
        if corrupt_gradient:
            analytic = analytic.copy()
            analytic[0] += 1e-3

        gl0 = batch.gl.vectors
        a0 = batch.a.vectors
        numeric = np.empty_like(analytic)
        cursor = 0
        for target in ("gl", "a"):
            base = gl0 if target == "gl" else a0
            for flat in range(base.size):
                bumped = base.copy().ravel()
                bumped[flat] += step
                plus = bumped.reshape(base.shape)
                bumped = base.copy().ravel()
                bumped[flat] -= step
                minus = bumped.reshape(base.shape)
                if target == "gl":
                    f_plus = _loss_fn(objective, _rebuild(batch, plus, a0), inst_tau, radius_m, weight).loss
                    f_minus = _loss_fn(objective, _rebuild(batch, minus, a0), inst_tau, radius_m, weight).loss
                else:
                    f_plus = _loss_fn(objective, _rebuild(batch, gl0, plus), inst_tau, radius_m, weight).loss
                    f_minus = _loss_fn(objective, _rebuild(batch, gl0, minus), inst_tau, radius_m, weight).loss
                numeric[cursor] = (f_plus - f_minus) / (2.0 * step)
                cursor += 1
        worst = max(worst, relative_gradient_error(analytic, numeric))

        if objective == "par":
            f_plus = _loss_fn(objective, batch, inst_tau, radius_m,
                              losses.LossWeight(weight.w + step)).loss
            f_minus = _loss_fn(objective, batch, inst_tau, radius_m,
                               losses.LossWeight(weight.w - step)).loss
            numeric_w = (f_plus - f_minus) / (2.0 * step)
            # absolute below 1, relative above: robust when the two
            # directional losses nearly coincide and grad_w ~ 0
            denom = max(1.0, abs(result.grad_w), abs(numeric_w))
            worst_w = max(worst_w, abs(result.grad_w - numeric_w) / denom)
    return GradCheckReport(
        objective=objective,
        instances=n_instances,
        max_rel_err=worst,
        max_w_err=worst_w,
        tolerance=tolerance,
    )


def check_all(
    objectives=CHECKED_OBJECTIVES,
    n_instances: int = 50,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-5,
    corrupt_gradient: bool = False,
) -> List[GradCheckReport]:
    return [
        check_objective(
            obj,
            n_instances=n_instances,
            seed=seed + i,
            step=step,
            tolerance=tolerance,
            corrupt_gradient=corrupt_gradient,
        )
        for i, obj in enumerate(objectives)
    ]
