"""Trainable embeddings, LightGCN-style propagation and dot-product scoring.

Matrix factorization is the ``num_layers=0`` case: propagation is the
identity and scores are plain dot products of the free embeddings.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .dataset import NormalizedAdjacency
from .seeding import INIT, rng_for

DEFAULT_DIM = 64
DEFAULT_INIT_SCALE = 0.01


class ShapeError(ValueError):
    pass


@dataclass(eq=False)
class EmbeddingState:
    user_emb: np.ndarray
    item_emb: np.ndarray

    def __post_init__(self):
        self.user_emb = np.ascontiguousarray(self.user_emb, dtype=np.float64)
        self.item_emb = np.ascontiguousarray(self.item_emb, dtype=np.float64)
        if self.user_emb.ndim != 2 or self.item_emb.ndim != 2:
            raise ShapeError("embedding matrices must be 2-D")
        if self.user_emb.shape[1] != self.item_emb.shape[1]:
            raise ShapeError("user and item embeddings must share a dimension")
        if self.user_emb.shape[1] <= 0:
            raise ShapeError("embedding dimension must be positive")

    @property
    def dim(self):
        return self.user_emb.shape[1]

    @property
    def num_users(self):
        return self.user_emb.shape[0]

    @property
    def num_items(self):
        return self.item_emb.shape[0]

    def copy(self):
        return EmbeddingState(self.user_emb.copy(), self.item_emb.copy())

    def is_finite(self):
        return bool(np.isfinite(self.user_emb).all() and np.isfinite(self.item_emb).all())


@dataclass(eq=False)
class PropagatedEmbeddings:
    final_user: np.ndarray
    final_item: np.ndarray
    num_layers: int = 0


def init_embeddings(num_users, num_items, d=DEFAULT_DIM, seed=0, scale=DEFAULT_INIT_SCALE):
    """Seeded i.i.d. Gaussian(0, scale**2) embeddings."""
    if d <= 0:
        raise ShapeError(f"embedding dimension must be positive, got {d}")
    if scale <= 0:
        raise ValueError(f"init scale must be positive, got {scale}")
    rng = rng_for(seed, INIT)
    user = rng.normal(0.0, scale, size=(num_users, d))
    item = rng.normal(0.0, scale, size=(num_items, d))
    return EmbeddingState(user, item)


def _layer_mean(user0, item0, adj, num_layers):
    if num_layers < 0:
        raise ValueError("num_layers must be >= 0")
    if user0.shape[0] != adj.num_users or item0.shape[0] != adj.num_items:
        raise ShapeError(
            f"adjacency is {adj.num_users}x{adj.num_items}, embeddings are "
            f"{user0.shape[0]}x{item0.shape[0]}"
        )
    acc_u = user0.copy()
    acc_i = item0.copy()
    cur_u, cur_i = user0, item0
    for _ in range(num_layers):
        nxt_u = kernels.csr_matmul(adj.user_indptr, adj.user_indices, adj.user_weights, cur_i)
        nxt_i = kernels.csr_matmul(adj.item_indptr, adj.item_indices, adj.item_weights, cur_u)
        acc_u += nxt_u
        acc_i += nxt_i
        cur_u, cur_i = nxt_u, nxt_i
    scale = 1.0 / (num_layers + 1)
    acc_u *= scale
    acc_i *= scale
    return acc_u, acc_i


def propagate(state: EmbeddingState, adj: NormalizedAdjacency | None, num_layers: int) -> PropagatedEmbeddings:
    """Mean of layers ``0..num_layers`` of the linear bipartite recurrence.

    With ``num_layers == 0`` the returned matrices are the state's own arrays.
    """
    if num_layers == 0:
        return PropagatedEmbeddings(state.user_emb, state.item_emb, 0)
    if adj is None:
        raise ValueError("propagation with num_layers > 0 needs an adjacency")
    fu, fi = _layer_mean(state.user_emb, state.item_emb, adj, num_layers)
    return PropagatedEmbeddings(fu, fi, num_layers)


def backpropagate(grad_final_user, grad_final_item, adj, num_layers):
    """Map gradients w.r.t. propagated embeddings back to the free embeddings.

    The normalized bipartite operator is symmetric, so its adjoint is the
    same layer-mean recurrence applied to the incoming gradients.
    """
    if num_layers == 0:
        return grad_final_user, grad_final_item
    if adj is None:
        raise ValueError("backpropagation with num_layers > 0 needs an adjacency")
    gu = np.ascontiguousarray(grad_final_user, dtype=np.float64)
    gi = np.ascontiguousarray(grad_final_item, dtype=np.float64)
    return _layer_mean(gu, gi, adj, num_layers)


def _as_index(x):
    return np.ascontiguousarray(x, dtype=np.int64)


def score_batch(final: PropagatedEmbeddings, users, items):
    """Dot products ``final_user[users[b]] . final_item[items[b]]``.

    ``items`` is either length ``B`` (one item per user) or ``B x N``.
    """
    users = _as_index(users)
    items = _as_index(items)
    if users.ndim != 1:
        raise ShapeError("users must be a 1-D index array")
    if items.shape[:1] != users.shape:
        raise ShapeError(f"items {items.shape} not aligned with users {users.shape}")
    if items.ndim == 1:
        return kernels.gather_dot(final.final_user, users, final.final_item, items)
    if items.ndim == 2:
        return kernels.gather_dot_multi(final.final_user, users, final.final_item, items)
    raise ShapeError("items must be 1-D or 2-D")


def score(final: PropagatedEmbeddings, u, i):
    return float(score_batch(final, [u], [i])[0])


# Checkpoint layout (little-endian):
#   bytes 0-7   magic b"SIMCEEMB"
#   bytes 8-11  uint32 format version (1)
#   bytes 12-15 uint32 reserved (0)
#   bytes 16-39 uint64 d, uint64 num_users, uint64 num_items
#   then float64 user_emb row-major, then float64 item_emb row-major
CHECKPOINT_MAGIC = b"SIMCEEMB"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sII3Q")


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: EmbeddingState, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, 0,
                          state.dim, state.num_users, state.num_items)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(state.user_emb.astype("<f8", copy=False).tobytes(order="C"))
            fh.write(state.item_emb.astype("<f8", copy=False).tobytes(order="C"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> EmbeddingState:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, _, d, nu, ni = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an embedding checkpoint")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    expected = _HEADER.size + 8 * d * (nu + ni)
    if len(raw) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    user = body[: nu * d].reshape(nu, d).astype(np.float64)
    item = body[nu * d:].reshape(ni, d).astype(np.float64)
    return EmbeddingState(user, item)
