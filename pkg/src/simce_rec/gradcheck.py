"""End-to-end analytic vs finite-difference gradient check on a tiny random model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, oracle
from .backbone import EmbeddingState, backpropagate, propagate, score_batch
from .dataset import InteractionDataset, build_adjacency
from .sampler import TrainBatch
from .seeding import GRADCHECK, rng_for

THRESHOLD = 1e-4


@dataclass
class Instance:
    ds: InteractionDataset
    adj: object
    state: EmbeddingState
    batch: TrainBatch
    num_layers: int


@dataclass
class GradcheckResult:
    loss: str
    num_layers: int
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    # distance of the nearest SimCE kink (hinge edge or argmax tie); inf otherwise
    kink_distance: float = np.inf

    @property
    def passed(self):
        return self.max_rel_error < THRESHOLD


def random_instance(seed, num_layers, num_users=5, num_items=7, dim=4, batch_size=6,
                    num_negatives=3, scale=0.7):
    rng = rng_for(seed, GRADCHECK)
    pairs = set()
    for u in range(num_users):
        k = int(rng.integers(1, num_items - 1))
        pairs.update((u, int(i)) for i in rng.choice(num_items, size=k, replace=False))
    for i in range(num_items):
        if not any(p[1] == i for p in pairs):
            pairs.add((int(rng.integers(0, num_users)), i))
    train = np.array(sorted(pairs), dtype=np.int64)
    # guarantee every user keeps at least one unobserved item
    keep = []
    for u in range(num_users):
        rows = train[train[:, 0] == u]
        keep.extend(rows[: num_items - 1].tolist())
    train = np.array(sorted(map(tuple, keep)), dtype=np.int64)
    empty = np.empty((0, 2), dtype=np.int64)
    ds = InteractionDataset(num_users, num_items, train, empty, empty,
                            [str(u) for u in range(num_users)], [str(i) for i in range(num_items)])
    adj = build_adjacency(ds)
    state = EmbeddingState(rng.normal(0, scale, (num_users, dim)), rng.normal(0, scale, (num_items, dim)))
    pick = rng.integers(0, len(train), size=batch_size)
    users = train[pick, 0].copy()
    pos = train[pick, 1].copy()
    negs = np.empty((batch_size, num_negatives), dtype=np.int64)
    for b, u in enumerate(users):
        free = np.setdiff1d(np.arange(num_items), ds.user_train_items(u))
        negs[b] = rng.choice(free, size=num_negatives)
    return Instance(ds, adj, state, TrainBatch(users, pos, negs), num_layers)


def _loss_grad(inst, loss, margin, state):
    final = propagate(state, inst.adj, inst.num_layers)
    pos = score_batch(final, inst.batch.users, inst.batch.pos_items)
    neg = score_batch(final, inst.batch.users, inst.batch.neg_items)
    return losses.compute(loss, pos, neg, margin=margin), final, pos, neg


def run(loss, num_layers, seed=0, margin=losses.SIMCE_MARGIN, h=1e-6):
    inst = random_instance(seed, num_layers, num_negatives=1 if loss == "bpr" else 3)
    nu, d = inst.state.user_emb.shape

    lg, final, pos, neg = _loss_grad(inst, loss, margin, inst.state)
    gu, gi = losses.chain_to_embeddings(lg, inst.batch, final)
    gu, gi = backpropagate(gu, gi, inst.adj, num_layers)
    analytic = np.concatenate([gu.ravel(), gi.ravel()])

    def f(flat):
        st = EmbeddingState(flat[: nu * d].reshape(nu, d), flat[nu * d:].reshape(-1, d))
        return _loss_grad(inst, loss, margin, st)[0].loss

    x0 = np.concatenate([inst.state.user_emb.ravel(), inst.state.item_emb.ravel()])
    numeric = oracle.fd_gradient(f, x0, h=h)

    kink = np.inf
    if loss == "simce":
        srt = np.sort(neg, axis=1)
        hinge_arg = margin - pos + srt[:, -1]
        kink = float(np.abs(hinge_arg).min())
        if neg.shape[1] > 1:
            kink = min(kink, float((srt[:, -1] - srt[:, -2]).min()))
    return GradcheckResult(loss, num_layers, oracle.max_relative_error(analytic, numeric),
                           analytic, numeric, kink)
