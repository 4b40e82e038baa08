"""Seeded mini-batches of (user, positive, N uniform negatives)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import kernels
from .dataset import InteractionDataset
from .seeding import SAMPLER, rng_for

NEGATIVES_GRID = (4, 8, 16, 32, 64, 128, 256, 512)
# redraws allowed per sample, as a multiple of N
RETRY_FACTOR = 100


class SamplingError(ValueError):
    pass


@dataclass(eq=False)
class TrainBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray  # (B, N)

    @property
    def size(self):
        return len(self.users)

    @property
    def num_negatives(self):
        return self.neg_items.shape[1]


class NegativeSampler:
    """Uniform rejection sampling of items outside a user's training set."""

    def __init__(self, ds: InteractionDataset):
        self.num_items = ds.num_items
        self._user_ids = ds.user_ids
        self._indptr = ds.train_indptr
        self._indices = ds.train_indices
        self._degree = ds.train_degree()

    def check_feasible(self):
        full = np.flatnonzero(self._degree >= self.num_items)
        if len(full):
            u = int(full[0])
            name = self._user_ids[u] if u < len(self._user_ids) else u
            raise SamplingError(
                f"user {name} (index {u}) has interacted with all {self.num_items} "
                "training items; no negative can be sampled"
            )

    def observed(self, users, items):
        users, items = np.broadcast_arrays(users, items)
        flat = kernels.observed_mask(self._indptr, self._indices,
                                     np.ascontiguousarray(users.ravel(), dtype=np.int64),
                                     np.ascontiguousarray(items.ravel(), dtype=np.int64))
        return flat.reshape(users.shape)

    def sample(self, rng, users, num_negatives):
        users = np.asarray(users, dtype=np.int64)
        cand = rng.integers(0, self.num_items, size=(len(users), num_negatives))
        bad = self.observed(users[:, None], cand)
        retries = np.zeros(len(users), dtype=np.int64)
        cap = RETRY_FACTOR * num_negatives
        while bad.any():
            rows, cols = np.nonzero(bad)
            retries += np.bincount(rows, minlength=len(users))
            if retries.max() > cap:
                b = int(np.argmax(retries))
                u = int(users[b])
                raise SamplingError(
                    f"user {self._user_ids[u]} (index {u}): negative sampling exceeded "
                    f"{cap} redraws; the user's training set covers almost every item"
                )
            fresh = rng.integers(0, self.num_items, size=len(rows))
            cand[rows, cols] = fresh
            bad[rows, cols] = self.observed(users[rows], fresh)
        return cand


def epoch_batches(ds: InteractionDataset, batch_size: int, num_negatives: int,
                  seed: int, epoch: int) -> Iterator[TrainBatch]:
    """Yield the batches of one epoch.

    Training pairs are shuffled by a generator keyed on ``(seed, epoch)`` and
    cut into consecutive batches of ``batch_size`` (the last may be short).
    Each negative slot is drawn independently, so a row may repeat an item.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if num_negatives < 1:
        raise ValueError("num_negatives must be >= 1")
    sampler = NegativeSampler(ds)
    sampler.check_feasible()
    rng = rng_for(seed, SAMPLER, epoch)
    pairs = ds.train_pairs
    order = rng.permutation(len(pairs))
    for lo in range(0, len(order), batch_size):
        chunk = pairs[order[lo:lo + batch_size]]
        users = np.ascontiguousarray(chunk[:, 0])
        pos = np.ascontiguousarray(chunk[:, 1])
        negs = sampler.sample(rng, users, num_negatives)
        yield TrainBatch(users, pos, negs)
