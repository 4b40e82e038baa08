"""Brute-force reference computations for verification.

Nothing here imports the modules it checks: the full-softmax loss, the
finite-difference gradient, dense propagation and sort-based ranking are
all written out directly. Only the test suite and the ``gradcheck`` CLI
command use this module.
"""

import math

import numpy as np

DENSE_NODE_CAP = 100


class OracleError(ValueError):
    pass


def full_softmax_ce(all_scores, pos_index):
    """``-log softmax(all_scores)[pos_index]`` over the whole item universe."""
    s = [float(x) for x in all_scores]
    if len(s) < 2:
        raise OracleError("full softmax needs at least two items")
    top = max(s)
    lse = top + math.log(math.fsum(math.exp(x - top) for x in s))
    return lse - s[pos_index]


def fd_gradient(func, x, h=1e-6):
    """Central differences ``(f(x + h e_k) - f(x - h e_k)) / 2h`` per coordinate."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        f_plus = func(x)
        flat[k] = orig - h
        f_minus = func(x)
        flat[k] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise OracleError(f"non-finite function value around coordinate {k}")
        grad[k] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def max_relative_error(analytic, numeric, floor=1e-12):
    """max_k |a_k - n_k| relative to the gradient scale max(|a|_inf, |n|_inf, floor).

    Scaling by the whole gradient rather than per entry keeps tiny components,
    whose finite-difference estimate is pure round-off, from dominating.
    Two all-zero gradients give 0.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = max(float(np.abs(a).max()), float(np.abs(n).max()), floor)
    return float(np.abs(a - n).max() / scale)


def dense_normalized_adjacency(num_users, num_items, edges):
    """The (users+items) square matrix with ``1/sqrt(deg u * deg i)`` on each edge."""
    n = num_users + num_items
    if n > DENSE_NODE_CAP:
        raise OracleError(f"dense oracle limited to {DENSE_NODE_CAP} nodes, got {n}")
    edges = sorted({(int(u), int(i)) for u, i in edges})
    deg_u = [0] * num_users
    deg_i = [0] * num_items
    for u, i in edges:
        deg_u[u] += 1
        deg_i[i] += 1
    a = np.zeros((n, n))
    for u, i in edges:
        w = 1.0 / math.sqrt(deg_u[u] * deg_i[i])
        a[u, num_users + i] = w
        a[num_users + i, u] = w
    return a


def dense_propagate(user_emb, item_emb, adjacency, num_layers):
    """Mean of ``A^k E`` for ``k = 0..num_layers`` with E the stacked embeddings."""
    e = np.vstack([user_emb, item_emb]).astype(np.float64)
    if adjacency.shape != (e.shape[0], e.shape[0]):
        raise OracleError("adjacency does not match the stacked embeddings")
    if e.shape[0] > DENSE_NODE_CAP:
        raise OracleError(f"dense oracle limited to {DENSE_NODE_CAP} nodes")
    acc = e.copy()
    cur = e
    for _ in range(num_layers):
        cur = adjacency @ cur
        acc = acc + cur
    acc = acc / (num_layers + 1)
    nu = len(user_emb)
    return acc[:nu], acc[nu:]


def naive_dot(x, y):
    total = 0.0
    for a, b in zip(x, y):
        total += float(a) * float(b)
    return total


def sorted_topk(scores, k, mask=(), truncate=False):
    """Top-k by full sort on (-score, index), skipping masked items.

    With ``truncate`` a short candidate list is returned whole instead of raising.
    """
    masked = set(int(m) for m in mask)
    candidates = [i for i in range(len(scores)) if i not in masked]
    candidates.sort(key=lambda i: (-float(scores[i]), i))
    if k > len(candidates) and not truncate:
        raise OracleError("k exceeds the number of candidates")
    return candidates[:k]


def brute_force_metrics(user_emb, item_emb, train_pairs, eval_pairs, ks=(10, 20)):
    """Per-split mean Recall@K / NDCG@K by scoring and sorting each user in Python."""
    train = {}
    for u, i in train_pairs:
        train.setdefault(int(u), set()).add(int(i))
    held = {}
    for u, i in eval_pairs:
        held.setdefault(int(u), set()).add(int(i))
    if not held:
        raise OracleError("no evaluation users")
    per = {f"{m}@{k}": [] for k in ks for m in ("recall", "ndcg")}
    for u in sorted(held):
        scores = [naive_dot(user_emb[u], item_emb[i]) for i in range(len(item_emb))]
        ranked = sorted_topk(scores, max(ks), train.get(u, ()), truncate=True)
        test = held[u]
        for k in ks:
            top = ranked[:k]
            per[f"recall@{k}"].append(sum(1 for i in top if i in test) / len(test))
            dcg = 0.0
            for r, i in enumerate(top, start=1):
                if i in test:
                    dcg += 1.0 / math.log2(r + 1)
            idcg = 0.0
            for r in range(1, min(k, len(test)) + 1):
                idcg += 1.0 / math.log2(r + 1)
            per[f"ndcg@{k}"].append(dcg / idcg)
    return {name: math.fsum(vals) / len(vals) for name, vals in per.items()}, per
