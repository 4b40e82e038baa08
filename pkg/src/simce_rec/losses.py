"""BPR, sampled softmax (SSM) and SimCE losses with analytic score gradients.

Each loss returns a :class:`LossGrad` holding the batch-mean loss and the
per-sample derivatives of the per-sample loss with respect to the positive
and negative scores. :func:`chain_to_embeddings` turns those into gradients
of the batch-mean loss with respect to the propagated embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import kernels

BPR_EPS = 1e-5
SIMCE_MARGIN = 5.0
MARGIN_GRID = (1.0, 5.0, 10.0)
LOSSES = ("bpr", "ssm", "simce")


@dataclass(eq=False)
class LossGrad:
    loss: float
    per_sample: np.ndarray
    d_pos: np.ndarray
    d_neg: np.ndarray
    # SimCE only: hardest-negative slot per sample, -1 where the hinge is inactive
    active_index: np.ndarray | None = None


def _pos_neg(pos_scores, neg_scores, *, matrix):
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.ndim != 1 or len(pos) == 0:
        raise ValueError("pos_scores must be a non-empty 1-D array")
    if matrix:
        if neg.ndim == 1:
            neg = neg[:, None]
        if neg.ndim != 2 or neg.shape[0] != len(pos) or neg.shape[1] < 1:
            raise ValueError(f"neg_scores must have shape (B, N>=1); got {neg.shape} for B={len(pos)}")
    else:
        neg = neg.reshape(-1) if neg.ndim == 2 and neg.shape[1] == 1 else neg
        if neg.shape != pos.shape:
            raise ValueError(f"neg_scores shape {neg.shape} does not match pos_scores {pos.shape}")
    return pos, neg


def bpr(pos_scores, neg_scores, eps=BPR_EPS):
    """Pairwise BPR: ``-log(eps + sigmoid(s_pos - s_neg))`` per sample."""
    pos, neg = _pos_neg(pos_scores, neg_scores, matrix=False)
    x = pos - neg
    sig = expit(x)
    per = -np.log(eps + sig)
    dx = -(sig * expit(-x)) / (eps + sig)
    return LossGrad(float(per.mean()), per, dx, -dx)


def ssm(pos_scores, neg_scores):
    """Sampled softmax cross-entropy, ``log(1 + sum_j exp(s_j - s_pos))``.

    Evaluated as ``m + log(exp(-m) + sum_j exp(z_j - m))`` with
    ``z_j = s_j - s_pos`` and ``m = max(0, max_j z_j)`` so large score gaps
    never overflow.
    """
    pos, neg = _pos_neg(pos_scores, neg_scores, matrix=True)
    z = neg - pos[:, None]
    m = np.maximum(z.max(axis=1), 0.0)
    ez = np.exp(z - m[:, None])
    denom = np.exp(-m) + ez.sum(axis=1)
    per = m + np.log(denom)
    p = ez / denom[:, None]
    d_pos = -p.sum(axis=1)
    return LossGrad(float(per.mean()), per, d_pos, p)


def simce(pos_scores, neg_scores, margin=SIMCE_MARGIN):
    """Hinge on the hardest sampled negative: ``max(margin - s_pos + max_j s_j, 0)``.

    Ties among the top negatives go to the lowest slot index. At exactly
    zero loss the gradient is zero.
    """
    if not np.isfinite(margin):
        raise ValueError("margin must be finite")
    pos, neg = _pos_neg(pos_scores, neg_scores, matrix=True)
    rows = np.arange(len(pos))
    hardest = np.argmax(neg, axis=1)
    per = np.maximum(margin - pos + neg[rows, hardest], 0.0)
    active = per > 0.0
    d_pos = np.where(active, -1.0, 0.0)
    d_neg = np.zeros_like(neg)
    d_neg[rows[active], hardest[active]] = 1.0
    active_index = np.where(active, hardest, -1)
    return LossGrad(float(per.mean()), per, d_pos, d_neg, active_index)


def hinge(pos_scores, neg_scores, margin=SIMCE_MARGIN):
    """Single-negative pairwise hinge, ``max(margin - s_pos + s_neg, 0)`` per sample."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(pos.shape)
    return np.maximum(margin - pos + neg, 0.0)


def compute(kind, pos_scores, neg_scores, margin=SIMCE_MARGIN, eps=BPR_EPS):
    if kind == "bpr":
        return bpr(pos_scores, neg_scores, eps=eps)
    if kind == "ssm":
        return ssm(pos_scores, neg_scores)
    if kind == "simce":
        return simce(pos_scores, neg_scores, margin=margin)
    raise ValueError(f"unknown loss {kind!r}; expected one of {LOSSES}")


def chain_to_embeddings(grad: LossGrad, batch, final):
    """Gradients of the batch-mean loss w.r.t. ``final.final_user`` / ``final.final_item``.

    Applies ``s(u, i) = f(u) . f(i)`` to every (user, positive) and
    (user, negative) score; repeated indices accumulate.
    """
    users = np.ascontiguousarray(batch.users, dtype=np.int64)
    pos_items = np.ascontiguousarray(batch.pos_items, dtype=np.int64)
    neg_items = np.ascontiguousarray(batch.neg_items, dtype=np.int64)
    if neg_items.ndim == 1:
        neg_items = neg_items[:, None]
    b = len(users)
    grad_user = np.zeros_like(final.final_user)
    grad_item = np.zeros_like(final.final_item)
    if b == 0:
        return grad_user, grad_item
    d_neg = np.asarray(grad.d_neg, dtype=np.float64).reshape(neg_items.shape)
    pos_coef = np.ascontiguousarray((np.asarray(grad.d_pos, dtype=np.float64) / b)[:, None])
    neg_coef = np.ascontiguousarray(d_neg / b)
    fu, fi = final.final_user, final.final_item
    kernels.scatter_outer(grad_user, grad_item, fu, fi, users,
                          np.ascontiguousarray(pos_items[:, None]), pos_coef)
    kernels.scatter_outer(grad_user, grad_item, fu, fi, users, neg_items, neg_coef)
    return grad_user, grad_item
