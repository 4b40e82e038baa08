"""Time the compiled kernels against their numpy twins, plus one training epoch.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from simce_rec import build_adjacency, build_dataset, synthetic_block_pairs
from simce_rec.kernels import available_backends


def _inputs(seed=0, users=2000, items=1000, d=64, batch=1024, negs=64):
    rng = np.random.default_rng(seed)
    ds = build_dataset(synthetic_block_pairs(users, items, 50, seed=seed), seed=seed)
    adj = build_adjacency(ds)
    u = rng.normal(size=(users, d))
    i = rng.normal(size=(items, d))
    rows = rng.integers(0, users, batch)
    pos = rng.integers(0, items, batch)
    neg = rng.integers(0, items, (batch, negs))
    coef = rng.normal(size=(batch, negs))
    return ds, adj, u, i, rows, pos, neg, coef


def bench_kernels(repeat):
    ds, adj, u, i, rows, pos, neg, coef = _inputs()
    users_q = np.repeat(rows, neg.shape[1])
    items_q = neg.ravel()
    cases = {
        "gather_dot": lambda k: k.gather_dot(u, rows, i, pos),
        "gather_dot_multi": lambda k: k.gather_dot_multi(u, rows, i, neg),
        "scatter_outer": lambda k: k.scatter_outer(np.zeros_like(u), np.zeros_like(i), u, i, rows, neg, coef),
        "csr_matmul": lambda k: k.csr_matmul(adj.user_indptr, adj.user_indices, adj.user_weights, i),
        "observed_mask": lambda k: k.observed_mask(ds.train_indptr, ds.train_indices, users_q, items_q),
    }
    backends = available_backends()
    names = sorted(backends)
    print(f"{'kernel':<18}" + "".join(f"{n + ' ms':>14}" for n in names) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for b in names:
            fn(backends[b])
            times[b] = min(timeit.repeat(lambda: fn(backends[b]), number=1, repeat=repeat)) * 1e3
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:<18}" + "".join(f"{times[b]:>14.3f}" for b in names) + f"{speed:>10.2f}")


_EPOCH_SNIPPET = """
import time
from simce_rec import build_dataset, synthetic_block_pairs, KERNEL_BACKEND
from simce_rec.trainer import TrainConfig, train
ds = build_dataset(synthetic_block_pairs(2000, 1000, 50, seed=0), seed=0)
for loss in ("bpr", "ssm", "simce"):
    cfg = TrainConfig(loss=loss, num_negatives=1 if loss == "bpr" else 64, num_layers=2, max_epochs=2, patience=5)
    rows = train(ds, cfg).report.rows
    print(f"{KERNEL_BACKEND:<10} {loss:<6} LightGCN K=2 epoch seconds {min(r.seconds for r in rows):.3f}")
"""


def bench_epoch():
    # the backend is chosen at import, so each one runs in its own interpreter
    for pure in ("0", "1"):
        env = dict(os.environ, SIMCE_REC_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", _EPOCH_SNIPPET], env=env, capture_output=True,
                             text=True, check=True)
        print(out.stdout, end="")


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--skip-epoch", action="store_true")
    args = parser.parse_args()
    bench_kernels(args.repeat)
    if not args.skip_epoch:
        bench_epoch()


if __name__ == "__main__":
    main()
