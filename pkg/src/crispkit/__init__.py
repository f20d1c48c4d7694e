"""Desk-scale toolkit for ground-level/aerial contrastive pre-training.

Core pieces: the four contrastive objectives with analytic gradients
(:mod:`crispkit.losses`), the geospatial block split protocol
(:mod:`crispkit.geo`), a deterministic synthetic multi-view corpus generator
(:mod:`crispkit.synth`), a small training stack (:mod:`crispkit.train`),
long-tail evaluation metrics (:mod:`crispkit.metrics`), and k-means++
(:mod:`crispkit.kmeans`). Hot kernels run through a compiled extension when
available (see :mod:`crispkit.backend`).
"""

from crispkit.backend import active_backend
from crispkit.embedding import (
    EmbeddingBatch,
    SimilarityMatrix,
    cosine_similarity_matrix,
    l2_normalize,
    softmax_nll_rows,
)
from crispkit.losses import (
    LossResult,
    LossWeight,
    PairedBatch,
    augment_aerial,
    build_positive_mask,
    many_to_one_crisp_loss,
    parameterized_crisp_loss,
    resolve_tau,
    standard_crisp_loss,
)
from crispkit.geo import (
    FrequencyBins,
    ObservationRecord,
    SplitManifest,
    assign_blocks,
    bin_by_frequency,
    block_of,
    build_split,
    haversine_m,
    sample_lambda_subset,
)
from crispkit.kmeans import KMeansConfig, kmeans_pp
from crispkit.metrics import (
    ClusteringPair,
    PredictionSet,
    binned_macro_accuracy,
    clustering_agreement,
    eco_accuracy,
    emit_report,
    topk_accuracy,
    topk_macro_accuracy,
)
from crispkit.synth import SynthConfig, SynthCorpus, corpus_stats, generate
from crispkit.train import (
    FitConfig,
    MoEHead,
    OptimizerState,
    PretrainConfig,
    ToyEncoder,
    finetune,
    label_smoothing_ce,
    linear_probe,
    moe_forward,
    pretrain,
    sgd_momentum_step,
)

__version__ = "0.1.0"

__all__ = [
    "active_backend",
    "EmbeddingBatch",
    "SimilarityMatrix",
    "cosine_similarity_matrix",
    "l2_normalize",
    "softmax_nll_rows",
    "LossResult",
    "LossWeight",
    "PairedBatch",
    "augment_aerial",
    "build_positive_mask",
    "many_to_one_crisp_loss",
    "parameterized_crisp_loss",
    "resolve_tau",
    "standard_crisp_loss",
    "FrequencyBins",
    "ObservationRecord",
    "SplitManifest",
    "assign_blocks",
    "bin_by_frequency",
    "block_of",
    "build_split",
    "haversine_m",
    "sample_lambda_subset",
    "KMeansConfig",
    "kmeans_pp",
    "ClusteringPair",
    "PredictionSet",
    "binned_macro_accuracy",
    "clustering_agreement",
    "eco_accuracy",
    "emit_report",
    "topk_accuracy",
    "topk_macro_accuracy",
    "SynthConfig",
    "SynthCorpus",
    "corpus_stats",
    "generate",
    "FitConfig",
    "MoEHead",
    "OptimizerState",
    "PretrainConfig",
    "ToyEncoder",
    "finetune",
    "label_smoothing_ce",
    "linear_probe",
    "moe_forward",
    "pretrain",
    "sgd_momentum_step",
]
