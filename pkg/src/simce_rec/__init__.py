"""Collaborative filtering with BPR, sampled softmax and SimCE losses.

MF and LightGCN-style backbones share one code path (MF is zero
propagation layers). Hot loops live in a Cython extension with a numpy
fallback; see :mod:`simce_rec.kernels`.
"""

from .backbone import (
    EmbeddingState,
    PropagatedEmbeddings,
    backpropagate,
    init_embeddings,
    load_checkpoint,
    propagate,
    save_checkpoint,
    score,
    score_batch,
)
from .dataset import (
    InteractionDataset,
    NormalizedAdjacency,
    build_adjacency,
    build_dataset,
    load_interactions,
    load_prepared,
    save_prepared,
    synthetic_block_pairs,
)
from .evaluator import MetricsReport, evaluate, ndcg_at_k, recall_at_k, topk
from .kernels import BACKEND as KERNEL_BACKEND
from .losses import LossGrad, bpr, chain_to_embeddings, simce, ssm
from .sampler import TrainBatch, epoch_batches
from .trainer import OptimizerState, TrainConfig, adam_step, train

__all__ = [
    "EmbeddingState",
    "PropagatedEmbeddings",
    "backpropagate",
    "init_embeddings",
    "load_checkpoint",
    "propagate",
    "save_checkpoint",
    "score",
    "score_batch",
    "InteractionDataset",
    "NormalizedAdjacency",
    "build_adjacency",
    "build_dataset",
    "load_interactions",
    "load_prepared",
    "save_prepared",
    "synthetic_block_pairs",
    "MetricsReport",
    "evaluate",
    "ndcg_at_k",
    "recall_at_k",
    "topk",
    "KERNEL_BACKEND",
    "LossGrad",
    "bpr",
    "chain_to_embeddings",
    "simce",
    "ssm",
    "TrainBatch",
    "epoch_batches",
    "OptimizerState",
    "TrainConfig",
    "adam_step",
    "train",
]

__version__ = "0.1.0"
