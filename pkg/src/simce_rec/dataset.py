"""Interaction ingestion, per-user splitting and the normalized bipartite graph."""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .seeding import SPLIT, SYNTHETIC, rng_for

FORMATS = ("edge_list", "adjacency_list")
DEFAULT_SPLIT = (0.8, 0.1, 0.1)
# users with fewer distinct items than this are kept entirely in train
MIN_ITEMS_FOR_EVAL = 3


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, path, lineno, line, reason):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}: {line.rstrip()!r}")


class EmptyDatasetError(DatasetError):
    pass


def load_interactions(path, format="edge_list", delimiter=None):
    """Read raw ``(user, item)`` token pairs from ``path`` in file order.

    ``edge_list`` lines are ``<user> <item> [ignored...]``; ``adjacency_list``
    lines are ``<user> <item1> <item2> ...``. Blank lines and lines starting
    with ``#`` are skipped. Duplicates are preserved.
    """
    if format not in FORMATS:
        raise DatasetError(f"unknown format {format!r}; expected one of {FORMATS}")
    pairs = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split(delimiter)
            tokens = [t.strip() for t in tokens if t.strip()]
            if format == "edge_list":
                if len(tokens) < 2:
                    raise ParseError(path, lineno, line, "expected '<user> <item>'")
                pairs.append((tokens[0], tokens[1]))
            else:
                if len(tokens) < 2:
                    raise ParseError(path, lineno, line, "expected '<user> <item> [<item> ...]'")
                user = tokens[0]
                pairs.extend((user, item) for item in tokens[1:])
    if not pairs:
        raise EmptyDatasetError(f"{path}: no interactions")
    return pairs


def filter_min_interactions(pairs, min_interactions):
    """Drop users with fewer than ``min_interactions`` distinct items (single pass)."""
    if min_interactions <= 1:
        return list(pairs)
    distinct: dict[Hashable, set] = {}
    for u, i in pairs:
        distinct.setdefault(u, set()).add(i)
    return [(u, i) for u, i in pairs if len(distinct[u]) >= min_interactions]


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _to_pair_array(pairs):
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    return np.ascontiguousarray(arr[order])


def _csr_from_pairs(pairs, num_rows):
    """Row pointer + column array for pairs already sorted by (row, col)."""
    counts = np.bincount(pairs[:, 0], minlength=num_rows) if len(pairs) else np.zeros(num_rows, np.int64)
    indptr = np.zeros(num_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, np.ascontiguousarray(pairs[:, 1])


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Dense-ID interaction data with a train/valid/test split.

    Pair arrays have shape ``(n, 2)`` holding ``(user, item)`` rows sorted by
    user then item. ``train_indptr``/``train_indices`` is the CSR view of the
    training pairs, i.e. each user's sorted training item set.
    """

    num_users: int
    num_items: int
    train_pairs: np.ndarray
    valid_pairs: np.ndarray
    test_pairs: np.ndarray
    user_ids: list = field(default_factory=list)
    item_ids: list = field(default_factory=list)
    train_indptr: np.ndarray = field(init=False, repr=False)
    train_indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        indptr, indices = _csr_from_pairs(self.train_pairs, self.num_users)
        object.__setattr__(self, "train_indptr", indptr)
        object.__setattr__(self, "train_indices", indices)

    def user_train_items(self, u):
        return self.train_indices[self.train_indptr[u]:self.train_indptr[u + 1]]

    def train_degree(self):
        return np.diff(self.train_indptr)

    def eval_csr(self, split):
        """CSR (indptr, items) of held-out items for ``split`` in {'valid', 'test'}."""
        pairs = self._split_pairs(split)
        return _csr_from_pairs(pairs, self.num_users)

    def _split_pairs(self, split):
        if split == "valid":
            return self.valid_pairs
        if split == "test":
            return self.test_pairs
        if split == "train":
            return self.train_pairs
        raise DatasetError(f"unknown split {split!r}; expected 'valid' or 'test'")

    @property
    def num_interactions(self):
        return len(self.train_pairs) + len(self.valid_pairs) + len(self.test_pairs)

    def stats(self):
        n = self.num_interactions
        return {
            "users": self.num_users,
            "items": self.num_items,
            "interactions": n,
            "density": n / (self.num_users * self.num_items),
        }

    def user_id_map(self):
        return {ext: k for k, ext in enumerate(self.user_ids)}

    def item_id_map(self):
        return {ext: k for k, ext in enumerate(self.item_ids)}


def build_dataset(pairs: Iterable[tuple], split: Sequence[float] = DEFAULT_SPLIT, seed: int = 0) -> InteractionDataset:
    """Assign dense IDs by first appearance, dedupe, and split each user's items.

    For a user with ``n >= 3`` distinct items the valid and test counts are
    ``round(frac * n)`` (half rounds up) and train keeps the remainder; the
    items are assigned after a seeded per-user shuffle. Users with fewer than
    three items go entirely to train.
    """
    fracs = tuple(float(f) for f in split)
    if len(fracs) != 3 or any(f <= 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
        raise DatasetError(f"split fractions must be three positive numbers summing to 1, got {split}")
    _, valid_frac, test_frac = fracs

    user_index: dict = {}
    item_index: dict = {}
    user_items: list[list[int]] = []
    seen = set()
    for u_ext, i_ext in pairs:
        u = user_index.get(u_ext)
        if u is None:
            u = user_index[u_ext] = len(user_index)
            user_items.append([])
        i = item_index.get(i_ext)
        if i is None:
            i = item_index[i_ext] = len(item_index)
        if (u, i) in seen:
            continue
        seen.add((u, i))
        user_items[u].append(i)
    if not seen:
        raise EmptyDatasetError("no interactions to build a dataset from")

    rng = rng_for(seed, SPLIT)
    train, valid, test = [], [], []
    for u, items in enumerate(user_items):
        n = len(items)
        if n < MIN_ITEMS_FOR_EVAL:
            train.extend((u, i) for i in items)
            continue
        perm = rng.permutation(n)
        n_valid = _round_half_up(valid_frac * n)
        n_test = _round_half_up(test_frac * n)
        # keep at least one training item so eval users are never cold-start
        while n_valid + n_test > n - 1:
            if n_test >= n_valid:
                n_test -= 1
            else:
                n_valid -= 1
        shuffled = [items[k] for k in perm]
        valid.extend((u, i) for i in shuffled[:n_valid])
        test.extend((u, i) for i in shuffled[n_valid:n_valid + n_test])
        train.extend((u, i) for i in shuffled[n_valid + n_test:])

    return InteractionDataset(
        num_users=len(user_index),
        num_items=len(item_index),
        train_pairs=_to_pair_array(train),
        valid_pairs=_to_pair_array(valid),
        test_pairs=_to_pair_array(test),
        user_ids=[str(k) for k in user_index],
        item_ids=[str(k) for k in item_index],
    )


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Symmetrically normalized user-item graph in both CSR orientations."""

    num_users: int
    num_items: int
    user_indptr: np.ndarray
    user_indices: np.ndarray
    user_weights: np.ndarray
    item_indptr: np.ndarray
    item_indices: np.ndarray
    item_weights: np.ndarray

    @property
    def num_edges(self):
        return len(self.user_indices)

    def user_edges(self):
        """(user, item, weight) arrays iterating user_rows."""
        users = np.repeat(np.arange(self.num_users), np.diff(self.user_indptr))
        return users, self.user_indices, self.user_weights

    def item_edges(self):
        """(user, item, weight) arrays iterating item_rows."""
        items = np.repeat(np.arange(self.num_items), np.diff(self.item_indptr))
        return self.item_indices, items, self.item_weights


def build_adjacency(ds: InteractionDataset) -> NormalizedAdjacency:
    pairs = ds.train_pairs
    users, items = pairs[:, 0], pairs[:, 1]
    deg_u = np.bincount(users, minlength=ds.num_users).astype(np.float64)
    deg_i = np.bincount(items, minlength=ds.num_items).astype(np.float64)
    weights = 1.0 / np.sqrt(deg_u[users] * deg_i[items]) if len(pairs) else np.empty(0)

    user_indptr, user_indices = _csr_from_pairs(pairs, ds.num_users)

    order = np.lexsort((users, items))
    t_pairs = np.ascontiguousarray(pairs[order][:, ::-1])
    item_indptr, item_indices = _csr_from_pairs(t_pairs, ds.num_items)

    return NormalizedAdjacency(
        num_users=ds.num_users,
        num_items=ds.num_items,
        user_indptr=user_indptr,
        user_indices=user_indices,
        user_weights=np.ascontiguousarray(weights),
        item_indptr=item_indptr,
        item_indices=item_indices,
        item_weights=np.ascontiguousarray(weights[order]),
    )


def synthetic_block_pairs(num_users=2000, num_items=1000, per_user=50, num_blocks=10,
                          in_block=0.8, seed=0):
    """Block-preference implicit feedback.

    Items are partitioned into ``num_blocks`` contiguous blocks and each user
    is assigned one block at random. A user takes ``round(in_block *
    per_user)`` distinct items from their block, weighted by a lognormal item
    popularity, and fills the rest uniformly from the remaining items.
    """
    rng = rng_for(seed, SYNTHETIC)
    block_of_item = np.arange(num_items) * num_blocks // num_items
    popularity = np.exp(rng.normal(0.0, 1.0, size=num_items))
    user_block = rng.integers(0, num_blocks, size=num_users)
    n_in = _round_half_up(in_block * per_user)
    pairs = []
    for u in range(num_users):
        members = np.flatnonzero(block_of_item == user_block[u])
        k_in = min(n_in, len(members))
        p = popularity[members] / popularity[members].sum()
        chosen = rng.choice(members, size=k_in, replace=False, p=p)
        rest = np.setdiff1d(np.arange(num_items), chosen)
        k_out = min(per_user - k_in, len(rest))
        chosen = np.concatenate([chosen, rng.choice(rest, size=k_out, replace=False)])
        rng.shuffle(chosen)
        pairs.extend((u, int(i)) for i in chosen)
    return pairs


# prepared-dataset directory layout
_ID_FILES = {"user": "user_ids.txt", "item": "item_ids.txt"}
_SPLIT_FILES = {"train": "train.txt", "valid": "valid.txt", "test": "test.txt"}
STATS_FILE = "stats.txt"


def atomic_write_text(path, text):
    """Write ``text`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_stats(ds):
    s = ds.stats()
    return (
        "#user #item #inter. density\n"
        f"{s['users']} {s['items']} {s['interactions']} {100 * s['density']:.3f}%\n"
    )


def save_prepared(ds: InteractionDataset, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / _ID_FILES["user"], "".join(f"{x}\n" for x in ds.user_ids))
    atomic_write_text(out / _ID_FILES["item"], "".join(f"{x}\n" for x in ds.item_ids))
    for name, fname in _SPLIT_FILES.items():
        pairs = ds._split_pairs(name)
        atomic_write_text(out / fname, "".join(f"{u} {i}\n" for u, i in pairs.tolist()))
    atomic_write_text(out / STATS_FILE, format_stats(ds))


def _read_ids(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _read_pairs(path, num_users, num_items):
    rows = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ParseError(path, lineno, line, "expected '<user_index> <item_index>'")
            try:
                u, i = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(path, lineno, line, "indices must be integers") from None
            if not (0 <= u < num_users and 0 <= i < num_items):
                raise ParseError(path, lineno, line, "index out of range")
            rows.append((u, i))
    return _to_pair_array(rows)


def load_prepared(data_dir) -> InteractionDataset:
    d = Path(data_dir)
    if not d.is_dir():
        raise DatasetError(f"{d}: prepared dataset directory not found")
    user_ids = _read_ids(d / _ID_FILES["user"])
    item_ids = _read_ids(d / _ID_FILES["item"])
    splits = {name: _read_pairs(d / fname, len(user_ids), len(item_ids))
              for name, fname in _SPLIT_FILES.items()}
    return InteractionDataset(
        num_users=len(user_ids),
        num_items=len(item_ids),
        train_pairs=splits["train"],
        valid_pairs=splits["valid"],
        test_pairs=splits["test"],
        user_ids=user_ids,
        item_ids=item_ids,
    )
