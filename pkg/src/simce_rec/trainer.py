"""Training loop: propagate, score, loss, backpropagate, lazy Adam/SGD update."""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import losses
from .backbone import (
    DEFAULT_INIT_SCALE,
    EmbeddingState,
    backpropagate,
    init_embeddings,
    propagate,
    score_batch,
)
from .dataset import InteractionDataset, build_adjacency
from .evaluator import EpochRow, MetricsReport, evaluate
from .sampler import epoch_batches

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


class ConfigError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, batch, what):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite {what} at epoch {epoch}, batch {batch}")


@dataclass
class TrainConfig:
    loss: str = "simce"
    num_negatives: int = 64
    margin: float = losses.SIMCE_MARGIN
    dim: int = 64
    num_layers: int = 2
    lr: float = 1e-4
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 10
    weight_decay: float = 1e-4
    seed: int = 0
    optimizer: str = "adam"
    eval_every: int = 1
    init_scale: float = DEFAULT_INIT_SCALE
    bpr_eps: float = losses.BPR_EPS
    # propagate once per epoch instead of per batch; gradients become approximate
    cache_propagation: bool = False

    def validate(self):
        if self.loss not in losses.LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {losses.LOSSES}")
        if self.loss == "bpr" and self.num_negatives != 1:
            raise ConfigError("BPR is defined with exactly one negative per positive")
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ConfigError("lr must be a finite non-negative number")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not math.isfinite(self.margin):
            raise ConfigError("margin must be finite")
        return self

    def as_dict(self):
        return asdict(self)

    def config_hash(self):
        text = "\n".join(f"{k}={v!r}" for k, v in sorted(self.as_dict().items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class OptimizerState:
    first_moment: list
    second_moment: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def _rows(a):
    return a.reshape(a.shape[0], -1) if a.ndim else a.reshape(1, 1)


def _touched(g2):
    return np.flatnonzero(np.any(g2 != 0.0, axis=1))


def adam_step(params, grads, state: OptimizerState, lr, weight_decay=0.0):
    """One bias-corrected Adam step, in place, on rows with a nonzero gradient.

    Weight decay enters as ``grad + weight_decay * param`` before the moment
    updates. Rows whose gradient is entirely zero keep their parameters and
    moments (lazy update); the step counter is shared.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        p2, g2, m2, v2 = _rows(p), _rows(g), _rows(m), _rows(v)
        rows = _touched(g2)
        if len(rows) == 0:
            continue
        gr = g2[rows]
        if weight_decay:
            gr = gr + weight_decay * p2[rows]
        m_new = b1 * m2[rows] + (1.0 - b1) * gr
        v_new = b2 * v2[rows] + (1.0 - b2) * (gr * gr)
        m2[rows] = m_new
        v2[rows] = v_new
        p2[rows] -= lr * (m_new / c1) / (np.sqrt(v_new / c2) + state.eps)
    return state


def sgd_step(params, grads, lr, weight_decay=0.0):
    for p, g in zip(params, grads):
        p2, g2 = _rows(p), _rows(g)
        rows = _touched(g2)
        if len(rows) == 0:
            continue
        gr = g2[rows]
        if weight_decay:
            gr = gr + weight_decay * p2[rows]
        p2[rows] -= lr * gr


@dataclass
class TrainResult:
    state: EmbeddingState  # best-validation checkpoint
    last_state: EmbeddingState
    report: MetricsReport = field(default_factory=MetricsReport)


def _batch_gradients(cfg, state, adj, batch, final, epoch, b):
    pos = score_batch(final, batch.users, batch.pos_items)
    neg = score_batch(final, batch.users, batch.neg_items)
    lg = losses.compute(cfg.loss, pos, neg, margin=cfg.margin, eps=cfg.bpr_eps)
    if not math.isfinite(lg.loss):
        raise TrainingDivergedError(epoch, b, "loss")
    gu, gi = losses.chain_to_embeddings(lg, batch, final)
    gu, gi = backpropagate(gu, gi, adj, cfg.num_layers)
    if not (np.isfinite(gu).all() and np.isfinite(gi).all()):
        raise TrainingDivergedError(epoch, b, "gradient")
    return lg, gu, gi


def train(ds: InteractionDataset, cfg: TrainConfig, adj=None, initial_state=None) -> TrainResult:
    """Fit embeddings with early stopping on validation Recall@20.

    Epochs are numbered from 1. ``report.best_epoch`` (the converged epoch)
    is the epoch of the highest validation Recall@20, earliest on ties, and
    training stops after ``patience`` evaluations without improvement.
    """
    cfg.validate()
    if cfg.num_layers > 0 and adj is None:
        adj = build_adjacency(ds)
    state = initial_state.copy() if initial_state is not None else init_embeddings(
        ds.num_users, ds.num_items, cfg.dim, cfg.seed, cfg.init_scale)
    report = MetricsReport(config={**cfg.as_dict(), "config_hash": cfg.config_hash()})
    if cfg.cache_propagation and cfg.num_layers > 0:
        report.notes.append("propagation cached per epoch: gradients are approximate")
    best_state = state.copy()
    best_r20 = -math.inf
    stale = 0
    opt = OptimizerState.zeros_like([state.user_emb, state.item_emb])
    n_pairs = len(ds.train_pairs)
    t_total = 0.0

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        loss_sum = 0.0
        cached = propagate(state, adj, cfg.num_layers) if cfg.cache_propagation else None
        for b, batch in enumerate(epoch_batches(ds, cfg.batch_size, cfg.num_negatives, cfg.seed, epoch)):
            final = cached if cached is not None else propagate(state, adj, cfg.num_layers)
            lg, gu, gi = _batch_gradients(cfg, state, adj, batch, final, epoch, b)
            params = [state.user_emb, state.item_emb]
            if cfg.optimizer == "adam":
                adam_step(params, [gu, gi], opt, cfg.lr, cfg.weight_decay)
            else:
                sgd_step(params, [gu, gi], cfg.lr, cfg.weight_decay)
            loss_sum += lg.loss * batch.size
        seconds = time.perf_counter() - t0
        t_total += seconds
        mean_loss = loss_sum / n_pairs if n_pairs else 0.0

        if epoch % cfg.eval_every == 0:
            m = evaluate(propagate(state, adj, cfg.num_layers), ds, split="valid")
            report.rows.append(EpochRow(epoch, mean_loss, m["recall@10"], m["ndcg@10"],
                                        m["recall@20"], m["ndcg@20"], seconds))
            logger.info("epoch %d loss %.6f recall@20 %.4f ndcg@20 %.4f (%.2fs)",
                        epoch, mean_loss, m["recall@20"], m["ndcg@20"], seconds)
            if m["recall@20"] > best_r20:
                best_r20 = m["recall@20"]
                best_state = state.copy()
                report.best_epoch = epoch
                report.best_metrics = dict(m)
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    logger.info("early stop at epoch %d (best %d)", epoch, report.best_epoch)
                    break
        else:
            nan = math.nan
            report.rows.append(EpochRow(epoch, mean_loss, nan, nan, nan, nan, seconds))

    report.total_seconds = t_total
    if report.rows and len(ds.test_pairs):
        report.test_metrics = evaluate(propagate(best_state, adj, cfg.num_layers), ds, split="test")
    return TrainResult(best_state, state, report)
