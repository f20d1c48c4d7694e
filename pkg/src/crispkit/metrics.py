"""Evaluation metrics: Top-K variants, group-averaged accuracy, clustering agreement.

Accuracy metrics operate on raw score matrices with deterministic
tie-breaking (equal scores prefer the lower class index), so results are
bit-reproducible. Clustering agreement implements the five standard
information-theoretic scores from the contingency table, with the
permutation-model expectation for adjusted mutual information and the
hypergeometric expectation for the adjusted Rand index.
"""

import json
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from crispkit.errors import (
    MissingBinsError,
    MissingGroupError,
    UnsupportedFormatError,
)
from crispkit.geo import FrequencyBins

BIN_NAMES = ("frequent", "common", "rare")


@dataclass(frozen=True)
class PredictionSet:
    """Per-sample class scores plus ground truth and optional groupings."""

    scores: np.ndarray
    true_class: np.ndarray
    group_id: Optional[np.ndarray] = None
    class_bins: Optional[FrequencyBins] = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        true = np.asarray(self.true_class, dtype=np.int64)
        if scores.ndim != 2 or scores.shape[0] == 0:
            raise ValueError(f"scores must be a nonempty (n_samples, n_classes) matrix, got {scores.shape}")
        if not np.isfinite(scores).all():
            raise ValueError("scores must be finite")
        if true.shape != (scores.shape[0],):
            raise ValueError("true_class length must match scores rows")
        if (true < 0).any() or (true >= scores.shape[1]).any():
            raise ValueError("true_class indices out of range")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "true_class", true)
        if self.group_id is not None:
            groups = np.asarray(self.group_id, dtype=np.int64)
            if groups.shape != (scores.shape[0],):
                raise ValueError("group_id length must match scores rows")
            object.__setattr__(self, "group_id", groups)

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]


def _topk_hits(p: PredictionSet, k: int) -> np.ndarray:
    """Whether each sample's true class ranks in the top k.

    Rank = number of classes strictly better, where class j beats the true
    class t when score_j > score_t, or score_j == score_t and j < t.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s_true = p.scores[np.arange(p.n_samples), p.true_class]
    higher = (p.scores > s_true[:, None]).sum(axis=1)
    idx = np.arange(p.n_classes)
    tied_before = (
        (p.scores == s_true[:, None]) & (idx[None, :] < p.true_class[:, None])
    ).sum(axis=1)
    return (higher + tied_before) < k


def topk_accuracy(p: PredictionSet, k: int) -> float:
    """Fraction of samples whose true class is among the k best scores."""
    return float(_topk_hits(p, k).mean())


def topk_macro_accuracy(p: PredictionSet, k: int) -> float:
    """Unweighted mean over classes (present in the truth) of per-class top-k."""
    hits = _topk_hits(p, k)
    classes = np.unique(p.true_class)
    per_class = [hits[p.true_class == c].mean() for c in classes]
    return float(np.mean(per_class))


def eco_accuracy(p: PredictionSet, k: int = 1) -> float:
    """Top-k accuracy averaged over groups instead of classes."""
    if p.group_id is None:
        raise MissingGroupError("eco accuracy needs a group_id per sample")
    hits = _topk_hits(p, k)
    groups = np.unique(p.group_id)
    per_group = [hits[p.group_id == g].mean() for g in groups]
    return float(np.mean(per_group))


def binned_macro_accuracy(p: PredictionSet, k: int) -> Dict[str, Optional[float]]:
    """Macro top-k accuracy restricted to frequent/common/rare class bins.

    Bins with no supported class come back as None.
    """
    if p.class_bins is None:
        raise MissingBinsError("binned accuracy needs class frequency bins")
    hits = _topk_hits(p, k)
    present = np.unique(p.true_class)
    out: Dict[str, Optional[float]] = {}
    for name in BIN_NAMES:
        classes = [c for c in present if p.class_bins.bin_of.get(int(c)) == name]
        if not classes:
            out[name] = None
            continue
        per_class = [hits[p.true_class == c].mean() for c in classes]
        out[name] = float(np.mean(per_class))
    return out


@dataclass(frozen=True)
class ClusteringPair:
    """Predicted cluster ids against ground-truth labels (same length)."""

    predicted_cluster: np.ndarray
    true_label: np.ndarray

    def __post_init__(self):
        pred = np.asarray(self.predicted_cluster, dtype=np.int64)
        true = np.asarray(self.true_label, dtype=np.int64)
        if pred.ndim != 1 or pred.shape != true.shape or pred.shape[0] == 0:
            raise ValueError("clustering pair needs two equal-length nonempty vectors")
        object.__setattr__(self, "predicted_cluster", pred)
        object.__setattr__(self, "true_label", true)


def _contingency(c: ClusteringPair) -> np.ndarray:
    _, pred_inv = np.unique(c.predicted_cluster, return_inverse=True)
    _, true_inv = np.unique(c.true_label, return_inverse=True)
    table = np.zeros((pred_inv.max() + 1, true_inv.max() + 1), dtype=np.int64)
    np.add.at(table, (pred_inv, true_inv), 1)
    return table


def _entropy(sizes: np.ndarray, n: int) -> float:
    probs = sizes[sizes > 0] / n
    return float(-(probs * np.log(probs)).sum())


def _mutual_information(table: np.ndarray, n: int) -> float:
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    nz = table > 0
    nij = table[nz].astype(np.float64)
    outer = (a[:, None] * b[None, :])[nz].astype(np.float64)
    return float((nij / n * (np.log(n * nij) - np.log(outer))).sum())


def expected_mutual_information(table: np.ndarray, n: int) -> float:
    """Expectation of MI over the permutation model with fixed marginals."""
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    log_n = math.log(n)
    lg = [math.lgamma(x + 1.0) for x in range(n + 1)]
    emi = 0.0
    for ai in a:
        ai = int(ai)
        for bj in b:
            bj = int(bj)
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                term = (nij / n) * (log_n + math.log(nij) - math.log(ai) - math.log(bj))
                log_prob = (
                    lg[ai]
                    + lg[bj]
                    + lg[n - ai]
                    + lg[n - bj]
                    - lg[n]
                    - lg[nij]
                    - lg[ai - nij]
                    - lg[bj - nij]
                    - lg[n - ai - bj + nij]
                )
                emi += term * math.exp(log_prob)
    return emi


def _comb2(x: np.ndarray) -> float:
    x = x.astype(np.float64)
    return float((x * (x - 1.0) / 2.0).sum())


def clustering_agreement(c: ClusteringPair) -> Dict[str, float]:
    """Homogeneity, completeness, V-measure, adjusted Rand, adjusted MI."""
    table = _contingency(c)
    n = int(table.sum())
    cluster_sizes = table.sum(axis=1)
    label_sizes = table.sum(axis=0)

    h_pred = _entropy(cluster_sizes, n)
    h_true = _entropy(label_sizes, n)
    mi = _mutual_information(table, n)

    homogeneity = 1.0 if h_true == 0.0 else mi / h_true
    completeness = 1.0 if h_pred == 0.0 else mi / h_pred
    if homogeneity + completeness == 0.0:
        v_measure = 0.0
    else:
        v_measure = 2.0 * homogeneity * completeness / (homogeneity + completeness)

    sum_comb = _comb2(table.ravel())
    a_comb = _comb2(cluster_sizes)
    b_comb = _comb2(label_sizes)
    total_comb = n * (n - 1.0) / 2.0
    expected = a_comb * b_comb / total_comb if total_comb else 0.0
    max_index = 0.5 * (a_comb + b_comb)
    if max_index == expected:
        ari = 1.0
    else:
        ari = (sum_comb - expected) / (max_index - expected)

    if table.shape[0] == 1 and table.shape[1] == 1:
        ami = 1.0
    else:
        emi = expected_mutual_information(table, n)
        normalizer = 0.5 * (h_pred + h_true)
        denom = normalizer - emi
        eps = np.finfo(np.float64).eps
        denom = min(denom, -eps) if denom < 0 else max(denom, eps)
        ami = (mi - emi) / denom

    return {
        "homogeneity": float(homogeneity),
        "completeness": float(completeness),
        "v_measure": float(v_measure),
        "adjusted_rand": float(ari),
        "adjusted_mutual_info": float(ami),
    }


# report rendering


def _sig6(value):
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(f"{float(value):.6g}")
    return value


def emit_report(metrics: Dict[str, object], format: str = "json") -> str:
    """Serialize a metric map to JSON or CSV.

    Values may be scalars or per-split mappings; keys are emitted in sorted
    order and numbers carry 6 significant digits. The CSV layout is one row
    per metric with one column per split (a bare "value" column for flat
    scalars).
    """
    if format == "json":
        doc = {}
        for name in sorted(metrics):
            value = metrics[name]
            if isinstance(value, dict):
                doc[name] = {k: _sig6(v) for k, v in sorted(value.items())}
            else:
                doc[name] = _sig6(value)
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))
    if format == "csv":
        columns = set()
        any_flat = False
        for value in metrics.values():
            if isinstance(value, dict):
                columns.update(value.keys())
            else:
                any_flat = True
        if any_flat or not columns:
            columns.add("value")
        columns = sorted(columns)

        def cell(v):
            v = _sig6(v)
            return "" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v))

        lines = ["metric," + ",".join(columns)]
        for name in sorted(metrics):
            value = metrics[name]
            if isinstance(value, dict):
                row = [cell(value.get(col)) for col in columns]
            else:
                row = [cell(value) if col == "value" else "" for col in columns]
            lines.append(name + "," + ",".join(row))
        return "\n".join(lines) + "\n"
    raise UnsupportedFormatError(f"unsupported report format: {format!r}")
