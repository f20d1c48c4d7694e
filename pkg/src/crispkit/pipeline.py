"""Glue between corpora, split manifests, and the training/evaluation ops.

Assembles labeled example matrices per split (one sample per ground view, or
one per observation for the aerial view), applies the per-fraction class
restriction, and runs the pretrain-then-probe comparison used to check that
contrastive pre-training actually helps in label-scarce settings.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from crispkit import train
from crispkit.geo import SplitManifest
from crispkit.synth import SynthCorpus
from crispkit.train import FitConfig, PretrainConfig, ToyEncoder


def train_pool_ids(manifest: SplitManifest) -> Tuple[str, ...]:
    """All train-split observations (the self-supervised pool)."""
    return manifest.ids_in_split("train")


@dataclass
class ExampleSet:
    """Dense-labeled feature matrix for one split and view."""

    x: np.ndarray
    y: np.ndarray  # dense indices into class_list
    group_id: np.ndarray
    obs_ids: List[str]
    class_list: Tuple[int, ...]


def _labeled_ids(corpus: SynthCorpus, manifest: SplitManifest, split: str,
                 subset_ids: Optional[Sequence[str]]) -> List[str]:
    if split == "train":
        ids = manifest.labeled_train if subset_ids is None else subset_ids
        return sorted(ids)
    return sorted(manifest.ids_in_split(split))


def assemble_examples(
    corpus: SynthCorpus,
    manifest: SplitManifest,
    split: str,
    view: str = "gl",
    subset_ids: Optional[Sequence[str]] = None,
    class_list: Optional[Sequence[int]] = None,
) -> ExampleSet:
    """Build (features, dense labels, groups) for a split.

    For the ground view every ground-level image is a separate example; for
    the aerial view each observation contributes its single aerial feature
    vector (raster corpora are mean-pooled). Observations whose class falls
    outside ``class_list`` are dropped; with ``class_list=None`` the classes
    present in the selected observations are used.
    """
    records = {r.obs_id: r for r in corpus.observations}
    ids = [i for i in _labeled_ids(corpus, manifest, split, subset_ids)
           if records[i].class_id is not None]
    if class_list is None:
        class_list = tuple(sorted({records[i].class_id for i in ids}))
    else:
        class_list = tuple(sorted(class_list))
    index_of = {c: j for j, c in enumerate(class_list)}

    rows, labels, groups, obs_ids = [], [], [], []
    for obs_id in ids:
        rec = records[obs_id]
        dense = index_of.get(rec.class_id)
        if dense is None:
            continue
        if view == "gl":
            views = corpus.ground_views[obs_id]
            for v in range(views.shape[0]):
                rows.append(views[v])
                labels.append(dense)
                groups.append(rec.group_id)
                obs_ids.append(obs_id)
        elif view == "a":
            aerial = corpus.aerial_views[obs_id]
            rows.append(train._aerial_vector(aerial))
            labels.append(dense)
            groups.append(rec.group_id)
            obs_ids.append(obs_id)
        else:
            raise ValueError(f"view must be 'gl' or 'a', got {view!r}")
    x = np.stack(rows) if rows else np.zeros((0, corpus.ground_dim() if view == "gl" else corpus.aerial_dim()))
    return ExampleSet(
        x=x,
        y=np.asarray(labels, dtype=np.int64),
        group_id=np.asarray(groups, dtype=np.int64),
        obs_ids=obs_ids,
        class_list=class_list,
    )


def evaluation_class_list(
    corpus: SynthCorpus, manifest: SplitManifest, subset_ids: Sequence[str]
) -> Tuple[int, ...]:
    """Classes present in the labeled subset and in both evaluation splits."""
    records = {r.obs_id: r for r in corpus.observations}

    def classes_of(ids):
        return {records[i].class_id for i in ids if records[i].class_id is not None}

    universe = (
        classes_of(subset_ids)
        & classes_of(manifest.ids_in_split("val"))
        & classes_of(manifest.ids_in_split("test"))
    )
    return tuple(sorted(universe))


@dataclass
class ProbeOutcome:
    top1: float
    macro_top1: float
    n_train: int
    n_eval: int
    n_classes: int


def probe_encoder(
    corpus: SynthCorpus,
    manifest: SplitManifest,
    encoder: ToyEncoder,
    subset_ids: Sequence[str],
    view: str = "gl",
    eval_split: str = "test",
    config: FitConfig = FitConfig(batch_size=None, epochs=200, base_lr=0.5),
) -> ProbeOutcome:
    """Linear-probe an encoder on a labeled subset; evaluate on a held-out split."""
    from crispkit.metrics import PredictionSet, topk_accuracy, topk_macro_accuracy

    class_list = evaluation_class_list(corpus, manifest, subset_ids)
    train_set = assemble_examples(corpus, manifest, "train", view, subset_ids, class_list)
    eval_set = assemble_examples(corpus, manifest, eval_split, view, None, class_list)
    classifier, _ = train.linear_probe(
        encoder, train_set.x, train_set.y, eval_set.x, eval_set.y,
        n_classes=len(class_list), config=config,
    )
    scores = classifier.scores(eval_set.x)
    preds = PredictionSet(scores, eval_set.y, group_id=eval_set.group_id)
    return ProbeOutcome(
        top1=topk_accuracy(preds, 1),
        macro_top1=topk_macro_accuracy(preds, 1),
        n_train=train_set.x.shape[0],
        n_eval=eval_set.x.shape[0],
        n_classes=len(class_list),
    )


def pretrained_vs_random_probe(
    corpus: SynthCorpus,
    manifest: SplitManifest,
    subset_ids: Sequence[str],
    seed: int,
    objective: str = "standard",
    pretrain_config: Optional[PretrainConfig] = None,
    probe_config: FitConfig = FitConfig(batch_size=None, epochs=200, base_lr=0.5),
) -> Dict[str, ProbeOutcome]:
    """Probe a contrastively pre-trained ground encoder against a random one.

    Both encoders share the architecture and the probe recipe; only the
    encoder weights differ.
    """
    cfg = pretrain_config or PretrainConfig()
    cfg = PretrainConfig(**{**cfg.__dict__, "seed": seed})
    result = train.pretrain(corpus, objective, cfg, obs_ids=train_pool_ids(manifest))
    random_enc = ToyEncoder.init(
        result.encoder_gl.input_dim,
        result.encoder_gl.hidden_dim,
        result.encoder_gl.embed_dim,
        np.random.default_rng(seed + 10_000),
    )
    return {
        "pretrained": probe_encoder(corpus, manifest, result.encoder_gl, subset_ids, config=probe_config),
        "random": probe_encoder(corpus, manifest, random_enc, subset_ids, config=probe_config),
    }


def multiview_ground_embeddings(
    corpus: SynthCorpus,
    encoder: Optional[ToyEncoder],
    min_views: int,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray, int]:
    """Embeddings and observation labels for the many-view clustering analysis.

    Keeps observations with at least ``min_views`` ground views. With
    ``encoder=None`` Gaussian noise of matching shape is returned instead
    (the null baseline), drawn from ``rng``.
    """
    rows, labels = [], []
    next_label = 0
    for rec in sorted(corpus.observations, key=lambda r: r.obs_id):
        views = corpus.ground_views[rec.obs_id]
        if views.shape[0] < min_views:
            continue
        for v in range(views.shape[0]):
            rows.append(views[v])
            labels.append(next_label)
        next_label += 1
    if not rows:
        return np.zeros((0, corpus.ground_dim())), np.zeros(0, dtype=np.int64), 0
    x = np.stack(rows)
    labels = np.asarray(labels, dtype=np.int64)
    if encoder is None:
        if rng is None:
            rng = np.random.default_rng(0)
        emb = rng.standard_normal((x.shape[0], x.shape[1]))
    else:
        emb = encoder.forward(x)
    return emb, labels, next_label
