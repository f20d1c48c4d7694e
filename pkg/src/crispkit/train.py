"""Desk-scale encoders and the optimization recipe.

Encoders are small tanh MLPs over feature vectors (smooth everywhere, so
analytic gradients finite-difference check tightly). The optimizer is SGD
with momentum 0.875, weight decay 3.05e-5 on non-bias parameters, and a
cosine-annealed learning rate; supervised objectives use cross entropy with
0.1 label smoothing. Contrastive pre-training, supervised fine-tuning with
best-epoch restore, frozen-feature linear probing, and a two-expert gated
fusion head all run on this recipe.
"""

import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from crispkit import io, losses
from crispkit.embedding import EmbeddingBatch
from crispkit.errors import (
    EmptySubsetError,
    InvalidConfigError,
    InvalidTargetError,
    ShapeMismatchError,
)
from crispkit.synth import SynthCorpus

OBJECTIVES = ("standard", "aug", "m2o", "par")


# encoder


@dataclass
class ToyEncoder:
    """Two-layer tanh MLP with a flat parameter vector.

    Layout: W1 (input x hidden), b1, W2 (hidden x embed), b2.
    """

    input_dim: int
    hidden_dim: int
    embed_dim: int
    params: np.ndarray

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, embed_dim: int, rng: np.random.Generator):
        w1 = rng.standard_normal((input_dim, hidden_dim)) / math.sqrt(input_dim)
        w2 = rng.standard_normal((hidden_dim, embed_dim)) / math.sqrt(hidden_dim)
        params = np.concatenate(
            [w1.ravel(), np.zeros(hidden_dim), w2.ravel(), np.zeros(embed_dim)]
        )
        return cls(input_dim, hidden_dim, embed_dim, params)

    def _slices(self):
        i, h, e = self.input_dim, self.hidden_dim, self.embed_dim
        ofs = 0
        w1 = slice(ofs, ofs + i * h)
        ofs = w1.stop
        b1 = slice(ofs, ofs + h)
        ofs = b1.stop
        w2 = slice(ofs, ofs + h * e)
        ofs = w2.stop
        b2 = slice(ofs, ofs + e)
        return w1, b1, w2, b2

    @property
    def n_params(self) -> int:
        i, h, e = self.input_dim, self.hidden_dim, self.embed_dim
        return i * h + h + h * e + e

    def unpack(self):
        w1s, b1s, w2s, b2s = self._slices()
        i, h, e = self.input_dim, self.hidden_dim, self.embed_dim
        return (
            self.params[w1s].reshape(i, h),
            self.params[b1s],
            self.params[w2s].reshape(h, e),
            self.params[b2s],
        )

    def decay_mask(self) -> np.ndarray:
        """True where weight decay applies (weights yes, biases no)."""
        w1s, b1s, w2s, b2s = self._slices()
        mask = np.ones(self.n_params, dtype=bool)
        mask[b1s] = False
        mask[b2s] = False
        return mask

    def forward(self, x: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self.unpack()
        return np.tanh(x @ w1 + b1) @ w2 + b2

    def forward_cache(self, x: np.ndarray):
        w1, b1, w2, b2 = self.unpack()
        hidden = np.tanh(x @ w1 + b1)
        return hidden @ w2 + b2, (x, hidden)

    def backward(self, cache, grad_out: np.ndarray):
        """Gradient of a scalar loss w.r.t. the flat params and the input."""
        x, hidden = cache
        w1, _, w2, _ = self.unpack()
        grad_w2 = hidden.T @ grad_out
        grad_b2 = grad_out.sum(axis=0)
        grad_hidden = grad_out @ w2.T
        grad_pre = grad_hidden * (1.0 - hidden * hidden)
        grad_w1 = x.T @ grad_pre
        grad_b1 = grad_pre.sum(axis=0)
        grad_x = grad_pre @ w1.T
        flat = np.concatenate(
            [grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2]
        )
        return flat, grad_x

    def copy(self) -> "ToyEncoder":
        return ToyEncoder(self.input_dim, self.hidden_dim, self.embed_dim, self.params.copy())


# optimizer


@dataclass
class OptimizerState:
    """SGD-with-momentum state and cosine learning-rate schedule."""

    base_lr: float
    total_steps: int
    velocity: np.ndarray
    decay_mask: Optional[np.ndarray] = None
    momentum: float = 0.875
    weight_decay: float = 3.05e-5
    step: int = 0

    @classmethod
    def for_params(cls, params: np.ndarray, base_lr: float, total_steps: int, **kw):
        return cls(
            base_lr=base_lr,
            total_steps=total_steps,
            velocity=np.zeros_like(params),
            **kw,
        )

    def lr_at(self, step: int) -> float:
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * step / self.total_steps))


def sgd_momentum_step(params: np.ndarray, grads: np.ndarray, state: OptimizerState) -> np.ndarray:
    """One in-place update: v <- m v + g + wd * p (decayed params only); p <- p - lr v."""
    if grads.shape != params.shape or state.velocity.shape != params.shape:
        raise ShapeMismatchError(
            f"params {params.shape}, grads {grads.shape}, velocity {state.velocity.shape}"
        )
    if state.step >= state.total_steps:
        raise ValueError("learning-rate schedule exhausted")
    update = grads
    if state.weight_decay != 0.0:
        if state.decay_mask is None:
            update = grads + state.weight_decay * params
        else:
            update = grads + state.weight_decay * (params * state.decay_mask)
    state.velocity *= state.momentum
    state.velocity += update
    params -= state.lr_at(state.step) * state.velocity
    state.step += 1
    return params


# supervised loss


def label_smoothing_ce(logits: np.ndarray, target, epsilon: float = 0.1):
    """Cross entropy against a smoothed target distribution, with gradient.

    The target distribution puts (1 - eps) + eps/K on the true class and
    eps/K on every other class. Accepts a single (K,) row with an int target
    or a (B, K) batch with per-row targets (loss averaged over the batch).
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
        target = np.asarray([target], dtype=np.int64)
    else:
        target = np.asarray(target, dtype=np.int64)
    n, k = logits.shape
    if k < 2:
        raise ValueError("label smoothing needs at least 2 classes")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    if target.shape != (n,) or (target < 0).any() or (target >= k).any():
        raise InvalidTargetError(f"targets out of range for {k} classes")

    q = np.full((n, k), epsilon / k)
    q[np.arange(n), target] += 1.0 - epsilon
    m = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - m)
    denom = z.sum(axis=1)
    lse = m[:, 0] + np.log(denom)
    loss = float((lse - (q * logits).sum(axis=1)).mean())
    grad = (z / denom[:, None] - q) / n
    return loss, (grad[0] if single else grad)


# contrastive pre-training


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 12
    batch_size: int = 350
    base_lr: float = 0.01
    momentum: float = 0.875
    weight_decay: float = 3.05e-5
    hidden_dim: int = 64
    embed_dim: int = 32
    tau: Optional[float] = None
    log_inv_temperature: float = losses.DEFAULT_LOG_INV_TEMPERATURE
    radius_m: float = 250.0
    dedupe_denominator: bool = False
    crop_hw: int = 0  # 0 -> half the raster side, only used by "aug"
    seed: int = 0


@dataclass
class PretrainResult:
    objective: str
    encoder_gl: ToyEncoder
    encoder_a: ToyEncoder
    history: List[dict]
    loss_weight: losses.LossWeight
    tau: float
    rng_state: Optional[dict] = None
    total_steps: int = 0


def _aerial_vector(raster_or_vec: np.ndarray) -> np.ndarray:
    if raster_or_vec.ndim == 3:
        return raster_or_vec.mean(axis=(1, 2))
    return raster_or_vec


def pretrain(
    corpus: SynthCorpus,
    objective: str,
    config: PretrainConfig,
    obs_ids: Optional[Sequence[str]] = None,
) -> PretrainResult:
    """Minibatched contrastive pre-training of a ground/aerial encoder pair.

    Batches sample observations without replacement (one uniformly drawn
    ground view each, plus the observation's aerial view), so the pairing is
    one-to-one within a batch unless the many-to-one objective mines extra
    co-located positives. Deterministic for a given seed.
    """
    if objective not in OBJECTIVES:
        raise InvalidConfigError(f"unknown objective {objective!r}; pick from {OBJECTIVES}")
    tau = losses.resolve_tau(config.tau, config.log_inv_temperature)
    records = {r.obs_id: r for r in corpus.observations}
    ids = sorted(records if obs_ids is None else obs_ids)
    n = len(ids)
    if n == 0:
        raise InvalidConfigError("no observations to pre-train on")
    if config.batch_size < 2 or config.batch_size > n:
        raise InvalidConfigError(
            f"batch_size must be in [2, {n}], got {config.batch_size}"
        )
    if objective == "aug" and not corpus.has_rasters():
        raise InvalidConfigError("augmented objective needs aerial rasters in the corpus")

    rng = np.random.default_rng(config.seed)
    gl_dim = corpus.ground_views[ids[0]].shape[1]
    a_dim = corpus.aerial_views[ids[0]].shape[0]
    enc_gl = ToyEncoder.init(gl_dim, config.hidden_dim, config.embed_dim, rng)
    enc_a = ToyEncoder.init(a_dim, config.hidden_dim, config.embed_dim, rng)
    weight = losses.LossWeight(0.0)

    steps_per_epoch = n // config.batch_size
    total_steps = config.epochs * steps_per_epoch
    opt_kw = dict(momentum=config.momentum, weight_decay=config.weight_decay)
    state_gl = OptimizerState.for_params(
        enc_gl.params, config.base_lr, total_steps, decay_mask=enc_gl.decay_mask(), **opt_kw
    )
    state_a = OptimizerState.for_params(
        enc_a.params, config.base_lr, total_steps, decay_mask=enc_a.decay_mask(), **opt_kw
    )
    w_arr = np.array([weight.w])
    # the gate is bias-like: momentum but no weight decay
    state_w = OptimizerState.for_params(
        w_arr, config.base_lr, total_steps, momentum=config.momentum, weight_decay=0.0
    )

    if corpus.has_rasters():
        raster_hw = corpus.aerial_views[ids[0]].shape[1]
        crop_hw = config.crop_hw if config.crop_hw > 0 else max(1, raster_hw // 2)
    view_counts = np.array([corpus.ground_views[i].shape[0] for i in ids])
    lats = np.array([records[i].lat for i in ids])
    lons = np.array([records[i].lon for i in ids])

    history = []
    for epoch in range(config.epochs):
        t_start = time.perf_counter()
        perm = rng.permutation(n)
        epoch_losses, epoch_gl, epoch_a = [], [], []
        lr_now = state_gl.lr_at(state_gl.step)
        gate_at_start = weight.mix()
        for b in range(steps_per_epoch):
            batch_idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            view_pick = rng.integers(0, view_counts[batch_idx])
            x_gl = np.stack(
                [corpus.ground_views[ids[i]][v] for i, v in zip(batch_idx, view_pick)]
            )
            if objective == "aug":
                x_a = np.stack(
                    [
                        losses.augment_aerial(
                            corpus.aerial_views[ids[i]], rng, crop_hw
                        ).mean(axis=(1, 2))
                        for i in batch_idx
                    ]
                )
            else:
                x_a = np.stack(
                    [_aerial_vector(corpus.aerial_views[ids[i]]) for i in batch_idx]
                )

            emb_gl, cache_gl = enc_gl.forward_cache(x_gl)
            emb_a, cache_a = enc_a.forward_cache(x_a)
            coords = np.stack([lats[batch_idx], lons[batch_idx]], axis=1)
            batch = losses.PairedBatch(
                gl=EmbeddingBatch(emb_gl, tuple(ids[i] for i in batch_idx)),
                a=EmbeddingBatch(emb_a, tuple(ids[i] for i in batch_idx)),
                pair_index=np.arange(len(batch_idx)),
                gl_coords=coords,
                a_coords=coords,
            )
            if objective == "m2o":
                result = losses.many_to_one_crisp_loss(
                    batch, tau, config.radius_m, config.dedupe_denominator
                )
            elif objective == "par":
                result = losses.parameterized_crisp_loss(batch, tau, weight)
            else:
                result = losses.standard_crisp_loss(batch, tau)

            grad_gl_params, _ = enc_gl.backward(cache_gl, result.grad_gl)
            grad_a_params, _ = enc_a.backward(cache_a, result.grad_a)
            sgd_momentum_step(enc_gl.params, grad_gl_params, state_gl)
            sgd_momentum_step(enc_a.params, grad_a_params, state_a)
            if objective == "par":
                sgd_momentum_step(w_arr, np.array([result.grad_w]), state_w)
                weight = losses.LossWeight(float(w_arr[0]))
            epoch_losses.append(result.loss)
            epoch_gl.append(result.parts.l_gl)
            epoch_a.append(result.parts.l_a)
        entry = {
            "epoch": epoch,
            "loss": float(np.mean(epoch_losses)),
            "loss_gl": float(np.mean(epoch_gl)),
            "loss_a": float(np.mean(epoch_a)),
            "lr": lr_now,
            "wall_time_s": time.perf_counter() - t_start,
        }
        if objective == "par":
            entry["gate"] = gate_at_start
        history.append(entry)

    state = rng.bit_generator.state
    return PretrainResult(
        objective=objective,
        encoder_gl=enc_gl,
        encoder_a=enc_a,
        history=history,
        loss_weight=weight,
        tau=tau,
        rng_state={"bit_generator": state["bit_generator"], "state": dict(state["state"])},
        total_steps=state_gl.step,
    )


# supervised heads


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 25
    batch_size: Optional[int] = 256  # None -> full batch
    base_lr: float = 0.01
    momentum: float = 0.875
    weight_decay: float = 3.05e-5
    label_smoothing: float = 0.1
    seed: int = 0


@dataclass
class LinearClassifier:
    encoder: ToyEncoder
    head_w: np.ndarray
    head_b: np.ndarray
    classes: Tuple[int, ...] = ()

    def scores(self, x: np.ndarray) -> np.ndarray:
        return self.encoder.forward(x) @ self.head_w + self.head_b


@dataclass
class FitResult:
    classifier: LinearClassifier
    history: List[dict]
    best_epoch: int
    best_val_top1: float


def _top1(scores: np.ndarray, labels: np.ndarray) -> float:
    from crispkit.metrics import PredictionSet, topk_accuracy

    return topk_accuracy(PredictionSet(scores, labels), 1)


def finetune(
    encoder: ToyEncoder,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    n_classes: int,
    config: FitConfig = FitConfig(),
    freeze_encoder: bool = False,
) -> FitResult:
    """Attach a linear head and train with label smoothing.

    Runs the full epoch budget, monitors validation top-1 after every epoch,
    and restores the parameters of the best epoch. With ``freeze_encoder``
    only the head is updated (the linear-probe path).
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_x = np.asarray(val_x, dtype=np.float64)
    val_y = np.asarray(val_y, dtype=np.int64)
    if train_x.shape[0] == 0:
        raise EmptySubsetError("no labeled examples to fit on")
    if train_y.shape != (train_x.shape[0],):
        raise ShapeMismatchError("labels must align with examples")
    if (train_y < 0).any() or (train_y >= n_classes).any():
        raise InvalidTargetError("training labels outside the class universe")

    rng = np.random.default_rng(config.seed)
    enc = encoder.copy()
    head_w = rng.standard_normal((enc.embed_dim, n_classes)) / math.sqrt(enc.embed_dim)
    head_b = np.zeros(n_classes)

    n = train_x.shape[0]
    batch = n if config.batch_size is None else min(config.batch_size, n)
    steps_per_epoch = max(1, n // batch)
    total_steps = config.epochs * steps_per_epoch
    opt_kw = dict(momentum=config.momentum, weight_decay=config.weight_decay)

    if freeze_encoder:
        params = np.concatenate([head_w.ravel(), head_b])
        decay = np.ones(params.size, dtype=bool)
        decay[head_w.size :] = False
        feat = enc.forward(train_x)
        feat_val = enc.forward(val_x) if val_x.shape[0] else np.zeros((0, enc.embed_dim))
    else:
        params = np.concatenate([enc.params, head_w.ravel(), head_b])
        decay = np.concatenate(
            [enc.decay_mask(), np.ones(head_w.size, dtype=bool), np.zeros(n_classes, dtype=bool)]
        )
    state = OptimizerState.for_params(
        params, config.base_lr, total_steps, decay_mask=decay, **opt_kw
    )

    def split_params(flat):
        if freeze_encoder:
            w = flat[: head_w.size].reshape(enc.embed_dim, n_classes)
            b = flat[head_w.size :]
            return None, w, b
        enc_p = flat[: enc.n_params]
        w = flat[enc.n_params : enc.n_params + head_w.size].reshape(enc.embed_dim, n_classes)
        b = flat[enc.n_params + head_w.size :]
        return enc_p, w, b

    def val_scores(flat):
        enc_p, w, b = split_params(flat)
        if freeze_encoder:
            return feat_val @ w + b
        probe_enc = ToyEncoder(enc.input_dim, enc.hidden_dim, enc.embed_dim, enc_p)
        return probe_enc.forward(val_x) @ w + b

    best_params = params.copy()
    best_top1 = -1.0
    best_epoch = -1
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = []
        for s in range(steps_per_epoch):
            sel = perm[s * batch : (s + 1) * batch]
            enc_p, w, b = split_params(params)
            if freeze_encoder:
                emb = feat[sel]
            else:
                live_enc = ToyEncoder(enc.input_dim, enc.hidden_dim, enc.embed_dim, enc_p)
                emb, cache = live_enc.forward_cache(train_x[sel])
            logits = emb @ w + b
            loss, grad_logits = label_smoothing_ce(
                logits, train_y[sel], config.label_smoothing
            )
            grad_w = emb.T @ grad_logits
            grad_b = grad_logits.sum(axis=0)
            if freeze_encoder:
                grads = np.concatenate([grad_w.ravel(), grad_b])
            else:
                grad_emb = grad_logits @ w.T
                grad_enc, _ = live_enc.backward(cache, grad_emb)
                grads = np.concatenate([grad_enc, grad_w.ravel(), grad_b])
            sgd_momentum_step(params, grads, state)
            epoch_loss.append(loss)
        if val_x.shape[0]:
            top1 = _top1(val_scores(params), np.asarray(val_y, dtype=np.int64))
        else:
            top1 = float("nan")
        history.append({"epoch": epoch, "loss": float(np.mean(epoch_loss)), "val_top1": top1})
        if val_x.shape[0] == 0 or top1 > best_top1:
            best_top1 = top1 if val_x.shape[0] else 0.0
            best_epoch = epoch
            best_params = params.copy()

    enc_p, w, b = split_params(best_params)
    final_enc = (
        enc if freeze_encoder else ToyEncoder(enc.input_dim, enc.hidden_dim, enc.embed_dim, enc_p)
    )
    classifier = LinearClassifier(final_enc, w.copy(), b.copy())
    return FitResult(classifier, history, best_epoch, best_top1 if val_x.shape[0] else float("nan"))


def linear_probe(
    encoder: ToyEncoder,
    train_x: np.ndarray,
    train_y: np.ndarray,
    eval_x: np.ndarray,
    eval_y: np.ndarray,
    n_classes: int,
    config: FitConfig = FitConfig(batch_size=None, epochs=200, base_lr=0.5),
) -> Tuple[LinearClassifier, float]:
    """Fit only a linear head on frozen encoder features; report eval top-1."""
    result = finetune(
        encoder,
        train_x,
        train_y,
        eval_x,
        eval_y,
        n_classes,
        config=config,
        freeze_encoder=True,
    )
    accuracy = _top1(result.classifier.scores(np.asarray(eval_x, dtype=np.float64)),
                     np.asarray(eval_y, dtype=np.int64)) if np.asarray(eval_x).shape[0] else float("nan")
    return result.classifier, accuracy


# mixture-of-experts fusion head


@dataclass
class MoEHead:
    """Two linear experts mixed by a sigmoid-gated scalar."""

    proj_gl_w: np.ndarray
    proj_gl_b: np.ndarray
    proj_a_w: np.ndarray
    proj_a_b: np.ndarray
    gate: float = 0.0

    @classmethod
    def init(cls, embed_gl: int, embed_a: int, n_classes: int, rng: np.random.Generator):
        return cls(
            proj_gl_w=rng.standard_normal((embed_gl, n_classes)) / math.sqrt(embed_gl),
            proj_gl_b=np.zeros(n_classes),
            proj_a_w=rng.standard_normal((embed_a, n_classes)) / math.sqrt(embed_a),
            proj_a_b=np.zeros(n_classes),
            gate=0.0,
        )

    def mix(self) -> float:
        return float(expit(self.gate))


def moe_forward(head: MoEHead, e_gl: np.ndarray, e_a: np.ndarray) -> np.ndarray:
    """logits = sigmoid(v) * proj_gl(e_gl) + (1 - sigmoid(v)) * proj_a(e_a)."""
    e_gl = np.asarray(e_gl, dtype=np.float64)
    e_a = np.asarray(e_a, dtype=np.float64)
    if e_gl.shape[-1] != head.proj_gl_w.shape[0] or e_a.shape[-1] != head.proj_a_w.shape[0]:
        raise ShapeMismatchError(
            f"embeddings ({e_gl.shape[-1]}, {e_a.shape[-1]}) do not match projections "
            f"({head.proj_gl_w.shape[0]}, {head.proj_a_w.shape[0]})"
        )
    mix = head.mix()
    logits_gl = e_gl @ head.proj_gl_w + head.proj_gl_b
    logits_a = e_a @ head.proj_a_w + head.proj_a_b
    return mix * logits_gl + (1.0 - mix) * logits_a


def moe_backward(head: MoEHead, e_gl: np.ndarray, e_a: np.ndarray, grad_logits: np.ndarray):
    """Gradients of a scalar loss w.r.t. all head parameters, given dL/dlogits."""
    e_gl = np.asarray(e_gl, dtype=np.float64)
    e_a = np.asarray(e_a, dtype=np.float64)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    mix = head.mix()
    logits_gl = e_gl @ head.proj_gl_w + head.proj_gl_b
    logits_a = e_a @ head.proj_a_w + head.proj_a_b
    grad_gate = mix * (1.0 - mix) * float((grad_logits * (logits_gl - logits_a)).sum())
    g_gl = mix * grad_logits
    g_a = (1.0 - mix) * grad_logits
    return {
        "proj_gl_w": e_gl.T @ g_gl,
        "proj_gl_b": g_gl.sum(axis=0),
        "proj_a_w": e_a.T @ g_a,
        "proj_a_b": g_a.sum(axis=0),
        "gate": grad_gate,
    }


def fit_moe_head(
    feat_gl: np.ndarray,
    feat_a: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    config: FitConfig = FitConfig(batch_size=None, epochs=200, base_lr=0.5),
) -> MoEHead:
    """Train the fusion head on frozen per-observation feature pairs."""
    feat_gl = np.asarray(feat_gl, dtype=np.float64)
    feat_a = np.asarray(feat_a, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = feat_gl.shape[0]
    if n == 0:
        raise EmptySubsetError("no labeled examples to fit on")
    rng = np.random.default_rng(config.seed)
    head = MoEHead.init(feat_gl.shape[1], feat_a.shape[1], n_classes, rng)

    names = ["proj_gl_w", "proj_gl_b", "proj_a_w", "proj_a_b", "gate"]
    shapes = {k: getattr(head, k).shape if k != "gate" else (1,) for k in names}

    def pack(values):
        return np.concatenate([np.asarray(values[k], dtype=np.float64).ravel() for k in names])

    def unpack(flat):
        out = {}
        ofs = 0
        for k in names:
            size = int(np.prod(shapes[k]))
            out[k] = flat[ofs : ofs + size].reshape(shapes[k])
            ofs += size
        return out

    params = pack({k: (getattr(head, k) if k != "gate" else np.array([head.gate])) for k in names})
    decay = np.zeros(params.size, dtype=bool)
    decay[: head.proj_gl_w.size] = True
    gl_end = head.proj_gl_w.size + head.proj_gl_b.size
    decay[gl_end : gl_end + head.proj_a_w.size] = True

    batch = n if config.batch_size is None else min(config.batch_size, n)
    steps_per_epoch = max(1, n // batch)
    state = OptimizerState.for_params(
        params,
        config.base_lr,
        config.epochs * steps_per_epoch,
        decay_mask=decay,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for s in range(steps_per_epoch):
            sel = perm[s * batch : (s + 1) * batch]
            parts = unpack(params)
            live = MoEHead(
                proj_gl_w=parts["proj_gl_w"],
                proj_gl_b=parts["proj_gl_b"],
                proj_a_w=parts["proj_a_w"],
                proj_a_b=parts["proj_a_b"],
                gate=float(parts["gate"][0]),
            )
            logits = moe_forward(live, feat_gl[sel], feat_a[sel])
            _, grad_logits = label_smoothing_ce(logits, labels[sel], config.label_smoothing)
            grads = moe_backward(live, feat_gl[sel], feat_a[sel], grad_logits)
            grads["gate"] = np.array([grads["gate"]])
            sgd_momentum_step(params, pack(grads), state)
    parts = unpack(params)
    return MoEHead(
        proj_gl_w=parts["proj_gl_w"].copy(),
        proj_gl_b=parts["proj_gl_b"].copy(),
        proj_a_w=parts["proj_a_w"].copy(),
        proj_a_b=parts["proj_a_b"].copy(),
        gate=float(parts["gate"][0]),
    )


# checkpoints


def save_encoder(path_base, encoder: ToyEncoder, meta: Optional[dict] = None) -> None:
    header = {
        "input_dim": encoder.input_dim,
        "hidden_dim": encoder.hidden_dim,
        "embed_dim": encoder.embed_dim,
    }
    if meta:
        header.update(meta)
    io.write_arrays(path_base, {"params": encoder.params}, meta=header)


def load_encoder(path_base) -> Tuple[ToyEncoder, dict]:
    arrays, meta = io.read_arrays(path_base)
    enc = ToyEncoder(
        int(meta["input_dim"]), int(meta["hidden_dim"]), int(meta["embed_dim"]), arrays["params"]
    )
    return enc, meta


def save_classifier(path_base, classifier: LinearClassifier, meta: Optional[dict] = None) -> None:
    header = {
        "input_dim": classifier.encoder.input_dim,
        "hidden_dim": classifier.encoder.hidden_dim,
        "embed_dim": classifier.encoder.embed_dim,
        "classes": list(classifier.classes),
    }
    if meta:
        header.update(meta)
    io.write_arrays(
        path_base,
        {
            "params": classifier.encoder.params,
            "head_w": classifier.head_w,
            "head_b": classifier.head_b,
        },
        meta=header,
    )


def load_classifier(path_base) -> Tuple[LinearClassifier, dict]:
    arrays, meta = io.read_arrays(path_base)
    enc = ToyEncoder(
        int(meta["input_dim"]), int(meta["hidden_dim"]), int(meta["embed_dim"]), arrays["params"]
    )
    classifier = LinearClassifier(
        enc, arrays["head_w"], arrays["head_b"], classes=tuple(meta.get("classes", ()))
    )
    return classifier, meta
