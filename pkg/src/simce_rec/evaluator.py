"""Full-ranking top-K evaluation (Recall@K, NDCG@K) and the per-epoch report."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_KS = (10, 20)
CSV_HEADER = ("epoch", "loss", "recall@10", "ndcg@10", "recall@20", "ndcg@20", "seconds")


class EvaluationError(ValueError):
    pass


def _discounts(k):
    return np.array([1.0 / math.log2(r + 1) for r in range(1, k + 1)])


def topk_rows(scores, k, pad=False):
    """Top-``k`` column indices per row, by descending score then ascending index.

    Masked entries should be ``-inf``. Every row needs at least ``k`` finite
    entries unless ``pad`` is set, in which case slots past the last finite
    entry hold -1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n_rows, n_cols = scores.shape
    if k <= 0:
        return np.empty((n_rows, 0), dtype=np.int64)
    finite = np.isfinite(scores).sum(axis=1)
    if n_rows and finite.min() < k and not pad:
        raise EvaluationError(
            f"top-{k} requested but a row has only {int(finite.min())} unmasked items"
        )
    rows = np.arange(n_rows)[:, None]
    if k < n_cols:
        part = np.argpartition(-scores, k - 1, axis=1)[:, :k]
        kth = scores[rows, part].min(axis=1)[:, None]
        greater = scores > kth
        equal = scores == kth
        need = k - greater.sum(axis=1)
        # lowest-index ties at the boundary win
        sel = greater | (equal & (np.cumsum(equal, axis=1) <= need[:, None]))
        cols = np.nonzero(sel)[1].reshape(n_rows, k)
    else:
        cols = np.broadcast_to(np.arange(n_cols), (n_rows, n_cols))
    order = np.argsort(-scores[rows, cols], axis=1, kind="stable")
    out = np.take_along_axis(cols, order, axis=1).astype(np.int64)
    if pad:
        out[np.isneginf(scores[rows, out])] = -1
        if k > n_cols:
            out = np.hstack([out, np.full((n_rows, k - n_cols), -1, dtype=np.int64)])
    return out


def topk(final, u, k, mask=()):
    """The ``k`` best unmasked items for user ``u`` under dot-product scores."""
    scores = final.final_item @ final.final_user[u]
    mask = np.asarray(list(mask) if not isinstance(mask, np.ndarray) else mask, dtype=np.int64)
    if k > len(scores) - len(np.unique(mask)):
        raise EvaluationError(f"k={k} exceeds the {len(scores) - len(np.unique(mask))} unmasked items")
    scores = scores.copy()
    scores[mask] = -np.inf
    return topk_rows(scores[None, :], k)[0]


def recall_at_k(ranked, test_items):
    test = set(int(x) for x in test_items)
    if not test:
        raise EvaluationError("recall is undefined for an empty test set")
    hits = sum(1 for x in ranked if int(x) in test)
    return hits / len(test)


def ndcg_at_k(ranked, test_items, k):
    test = set(int(x) for x in test_items)
    if not test:
        raise EvaluationError("NDCG is undefined for an empty test set")
    disc = _discounts(k)
    dcg = 0.0
    for r, item in enumerate(list(ranked)[:k]):
        if int(item) in test:
            dcg += disc[r]
    idcg = 0.0
    for r in range(min(k, len(test))):
        idcg += disc[r]
    return dcg / idcg


def per_user_metrics(final, ds, ks=DEFAULT_KS, split="valid", chunk=1024):
    """Per-user Recall@K / NDCG@K for every user with held-out items in ``split``.

    A user with fewer than K unmasked items gets a ranking of all of them.

    Returns ``(users, {"recall@K": array, "ndcg@K": array, ...})``.
    """
    indptr, held = ds.eval_csr(split)
    counts = np.diff(indptr)
    users = np.flatnonzero(counts > 0)
    if len(users) == 0:
        raise EvaluationError(f"no users with {split} interactions")
    kmax = max(ks)
    disc = _discounts(kmax)
    held_keys = np.repeat(np.arange(ds.num_users), counts) * ds.num_items + held
    fu, fi = final.final_user, final.final_item
    hits = np.zeros((len(users), kmax), dtype=bool)
    for lo in range(0, len(users), chunk):
        batch = users[lo:lo + chunk]
        scores = fu[batch] @ fi.T
        for r, u in enumerate(batch):
            scores[r, ds.user_train_items(u)] = -np.inf
        top = topk_rows(scores, kmax, pad=True)
        keys = batch[:, None] * ds.num_items + top
        pos = np.searchsorted(held_keys, keys)
        pos[pos == len(held_keys)] = 0
        hits[lo:lo + len(batch)] = (held_keys[pos] == keys) & (top >= 0)

    n_test = counts[users]
    out = {}
    gains = np.where(hits, disc, 0.0)
    # cumulative sums run left to right, matching a rank-by-rank loop
    dcg = np.cumsum(gains, axis=1)
    ideal = np.cumsum(disc)
    for k in ks:
        out[f"recall@{k}"] = hits[:, :k].sum(axis=1) / n_test
        out[f"ndcg@{k}"] = dcg[:, k - 1] / ideal[np.minimum(k, n_test) - 1]
    return users, out


def evaluate(final, ds, ks=DEFAULT_KS, split="valid"):
    """Uniform mean of per-user metrics over users with held-out items."""
    _, per_user = per_user_metrics(final, ds, ks, split)
    return {name: math.fsum(vals.tolist()) / len(vals) for name, vals in per_user.items()}


@dataclass
class EpochRow:
    epoch: int
    loss: float
    recall_10: float
    ndcg_10: float
    recall_20: float
    ndcg_20: float
    seconds: float


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_metrics: dict = field(default_factory=dict)
    test_metrics: dict = field(default_factory=dict)
    total_seconds: float = 0.0
    config: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def converged_epoch(self):
        return self.best_epoch

    @property
    def mean_epoch_seconds(self):
        return sum(r.seconds for r in self.rows) / len(self.rows) if self.rows else 0.0

    def to_csv(self, zero_seconds=False):
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        for r in self.rows:
            secs = 0.0 if zero_seconds else r.seconds
            buf.write(
                f"{r.epoch},{r.loss:.10g},{r.recall_10:.10g},{r.ndcg_10:.10g},"
                f"{r.recall_20:.10g},{r.ndcg_20:.10g},{secs:.6f}\n"
            )
        return buf.getvalue()
