"""Command-line entry point: prepare, synth, train, sweep, evaluate, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import kernels, losses
from .backbone import CheckpointError, load_checkpoint, propagate, save_checkpoint
from .dataset import (
    DEFAULT_SPLIT,
    FORMATS,
    DatasetError,
    atomic_write_text,
    build_adjacency,
    build_dataset,
    filter_min_interactions,
    format_stats,
    load_interactions,
    load_prepared,
    save_prepared,
    synthetic_block_pairs,
)
from .evaluator import evaluate
from .sampler import NEGATIVES_GRID, SamplingError
from .trainer import ConfigError, TrainConfig, TrainingDivergedError, train

logger = logging.getLogger("simce_rec")

DEFAULT_NEGATIVES = 64
SWEEP_GRIDS = {"negatives": NEGATIVES_GRID, "margin": losses.MARGIN_GRID}
SWEEP_HEADER = (
    "grid,value,converged_epoch,epochs_run,seconds_per_epoch,"
    "valid_recall@10,valid_ndcg@10,valid_recall@20,valid_ndcg@20,"
    "test_recall@10,test_ndcg@10,test_recall@20,test_ndcg@20"
)
METRIC_KEYS = ("recall@10", "ndcg@10", "recall@20", "ndcg@20")
_BOOL_KEYS = {"deterministic", "cache_propagation"}


def read_config_file(path):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DatasetError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key in _BOOL_KEYS:
                out[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                out[key] = value
    return out


def _format_kv(d):
    return "".join(f"{k} = {v}\n" for k, v in d.items())


def _add_training_flags(p):
    p.add_argument("--data", help="prepared dataset directory")
    p.add_argument("--loss", choices=losses.LOSSES, default="simce")
    p.add_argument("--negatives", type=int, default=None,
                   help=f"negatives per positive (default 1 for bpr, {DEFAULT_NEGATIVES} otherwise)")
    p.add_argument("--margin", type=float, default=losses.SIMCE_MARGIN)
    p.add_argument("--layers", type=int, default=2, help="propagation layers; 0 is plain MF")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--init-scale", type=float, default=0.01)
    p.add_argument("--cache-propagation", action="store_true",
                   help="propagate once per epoch (approximate gradients)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="run output directory")
    p.add_argument("--deterministic", action="store_true",
                   help="write 0 in the CSV seconds column so reruns are byte-identical")
    p.add_argument("--config", help="flat 'key = value' file; flags override it")


def build_parser(file_defaults=None):
    parser = argparse.ArgumentParser(prog="simce-rec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest raw interactions into a split dataset directory")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=FORMATS, default="edge_list")
    p.add_argument("--delimiter", default=None, help="field separator (default: whitespace)")
    p.add_argument("--split", type=float, nargs=3, default=list(DEFAULT_SPLIT),
                   metavar=("TRAIN", "VALID", "TEST"))
    p.add_argument("--min-interactions", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a block-preference synthetic edge list")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--items", type=int, default=1000)
    p.add_argument("--per-user", type=int, default=50)
    p.add_argument("--blocks", type=int, default=10)
    p.add_argument("--in-block", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one model")
    _add_training_flags(p)
    if file_defaults:
        p.set_defaults(**file_defaults)

    p = sub.add_parser("sweep", help="train across the negatives or margin grid")
    _add_training_flags(p)
    p.add_argument("--grid", choices=tuple(SWEEP_GRIDS), required=True)
    p.add_argument("--values", default=None, help="comma-separated custom grid")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    if file_defaults:
        p.set_defaults(**file_defaults)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--layers", type=int, default=None,
                   help="propagation layers (default: from the run's config.txt, else 0)")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--loss", choices=losses.LOSSES, required=True)
    p.add_argument("--backbone-layers", type=int, default=0)
    p.add_argument("--margin", type=float, default=losses.SIMCE_MARGIN)
    p.add_argument("--seed", type=int, default=0)
    return parser


def parse_args(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    file_defaults = read_config_file(known.config) if known.config else None
    parser = build_parser(file_defaults)
    return parser, parser.parse_args(argv)


def _resolve_train_config(parser, args, **override):
    if not args.data or not args.out:
        parser.error("--data and --out are required (on the command line or in --config)")
    loss = override.get("loss", args.loss)
    negatives = override.get("negatives", args.negatives)
    if negatives is None:
        negatives = 1 if loss == "bpr" else DEFAULT_NEGATIVES
    negatives = int(negatives)
    if loss == "bpr" and negatives != 1:
        parser.error("BPR is defined with a single negative; drop --negatives or use 1")
    cfg = TrainConfig(
        loss=loss,
        num_negatives=negatives,
        margin=float(override.get("margin", args.margin)),
        dim=args.dim,
        num_layers=args.layers,
        lr=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        patience=args.patience,
        weight_decay=args.weight_decay,
        seed=args.seed,
        optimizer=args.optimizer,
        eval_every=args.eval_every,
        init_scale=args.init_scale,
        cache_propagation=bool(args.cache_propagation),
    )
    try:
        cfg.validate()
    except ConfigError as exc:
        parser.error(str(exc))
    return cfg


def _run_training(data_dir, cfg, out_dir, deterministic):
    ds = load_prepared(data_dir)
    result = train(ds, cfg)
    report = result.report
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "epochs.csv", report.to_csv(zero_seconds=deterministic))
    save_checkpoint(result.state, out / "checkpoint.bin")
    echo = {"command": "train", "data": str(data_dir), **cfg.as_dict(),
            "config_hash": cfg.config_hash(), "deterministic": deterministic,
            "kernel_backend": kernels.BACKEND,
            "seed_derivation": "SeedSequence([seed, component, *keys]); split=1 init=2 sampler=3 (+epoch)"}
    atomic_write_text(out / "config.txt", _format_kv(echo))
    summary = {
        "converged_epoch": report.best_epoch,
        "epochs_run": len(report.rows),
        "mean_epoch_seconds": f"{report.mean_epoch_seconds:.6f}",
        "total_train_seconds": f"{report.total_seconds:.6f}",
    }
    summary.update({f"valid_{k}": f"{report.best_metrics.get(k, float('nan')):.6f}" for k in METRIC_KEYS})
    summary.update({f"test_{k}": f"{report.test_metrics.get(k, float('nan')):.6f}" for k in METRIC_KEYS})
    for note in report.notes:
        summary.setdefault("note", note)
    atomic_write_text(out / "summary.txt", _format_kv(summary))
    return summary


def cmd_prepare(args):
    pairs = load_interactions(args.input, args.format, args.delimiter)
    if args.min_interactions > 1:
        pairs = filter_min_interactions(pairs, args.min_interactions)
    ds = build_dataset(pairs, tuple(args.split), args.seed)
    save_prepared(ds, args.out)
    echo = {"command": "prepare", "input": args.input, "format": args.format,
            "delimiter": args.delimiter, "split": " ".join(map(str, args.split)),
            "min_interactions": args.min_interactions, "seed": args.seed}
    atomic_write_text(Path(args.out) / "config.txt", _format_kv(echo))
    sys.stdout.write(format_stats(ds))
    return 0


def cmd_synth(args):
    pairs = synthetic_block_pairs(args.users, args.items, args.per_user, args.blocks,
                                  args.in_block, args.seed)
    atomic_write_text(args.out, "".join(f"u{u} i{i}\n" for u, i in pairs))
    print(f"wrote {len(pairs)} interactions to {args.out}")
    return 0


def cmd_train(parser, args):
    cfg = _resolve_train_config(parser, args)
    summary = _run_training(args.data, cfg, args.out, args.deterministic)
    print(_format_kv(summary), end="")
    return 0


def cmd_sweep(parser, args):
    if args.values is not None:
        tokens = [t for t in args.values.replace(" ", ",").split(",") if t]
        if not tokens:
            parser.error("--values is empty")
        try:
            values = [int(t) for t in tokens] if args.grid == "negatives" else [float(t) for t in tokens]
        except ValueError:
            parser.error(f"--values: cannot parse {args.values!r}")
    else:
        values = list(SWEEP_GRIDS[args.grid])
    if args.grid == "negatives" and args.loss == "bpr":
        parser.error("the negatives grid does not apply to BPR (always one negative)")
    if args.grid == "margin" and args.loss != "simce":
        parser.error("the margin grid applies only to simce")

    key = "negatives" if args.grid == "negatives" else "margin"
    configs = [_resolve_train_config(parser, args, **{key: v}) for v in values]
    out = Path(args.out)
    dirs = [out / f"{args.grid}_{v}" for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_training, args.data, c, d, args.deterministic)
                       for c, d in zip(configs, dirs)]
            summaries = [f.result() for f in futures]
    else:
        summaries = [_run_training(args.data, c, d, args.deterministic) for c, d in zip(configs, dirs)]

    lines = [SWEEP_HEADER]
    for v, s in zip(values, summaries):
        secs = "0.000000" if args.deterministic else s["mean_epoch_seconds"]
        cells = [args.grid, str(v), str(s["converged_epoch"]), str(s["epochs_run"]), secs]
        cells += [s[f"valid_{k}"] for k in METRIC_KEYS] + [s[f"test_{k}"] for k in METRIC_KEYS]
        lines.append(",".join(cells))
    atomic_write_text(out / "sweep.csv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def _layers_from_run(checkpoint):
    cfg_path = Path(checkpoint).parent / "config.txt"
    if cfg_path.exists():
        try:
            return int(read_config_file(cfg_path).get("num_layers", 0))
        except (ValueError, DatasetError):
            return 0
    return 0


def cmd_evaluate(args):
    ds = load_prepared(args.data)
    state = load_checkpoint(args.checkpoint)
    if state.num_users != ds.num_users or state.num_items != ds.num_items:
        raise CheckpointError(
            f"checkpoint is {state.num_users} users x {state.num_items} items; "
            f"dataset has {ds.num_users} x {ds.num_items}"
        )
    layers = args.layers if args.layers is not None else _layers_from_run(args.checkpoint)
    adj = build_adjacency(ds) if layers > 0 else None
    metrics = evaluate(propagate(state, adj, layers), ds, split=args.split)
    for k in METRIC_KEYS:
        print(f"{args.split}_{k} = {metrics[k]:.6f}")
    return 0


def cmd_gradcheck(args):
    from . import gradcheck

    res = gradcheck.run(args.loss, args.backbone_layers, seed=args.seed, margin=args.margin)
    print(f"loss = {res.loss}")
    print(f"layers = {res.num_layers}")
    print(f"max_relative_error = {res.max_rel_error:.3e}")
    print(f"max_abs_analytic = {abs(res.analytic).max():.3e}")
    print(f"max_abs_numeric = {abs(res.numeric).max():.3e}")
    if res.kink_distance < 1e-4:
        print(f"warning: nearest hinge kink at {res.kink_distance:.2e}; finite differences may straddle it")
    print("PASS" if res.passed else "FAIL")
    return 0 if res.passed else 1


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "prepare":
            return cmd_prepare(args)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "train":
            return cmd_train(parser, args)
        if args.command == "sweep":
            return cmd_sweep(parser, args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
    except (DatasetError, CheckpointError, SamplingError, TrainingDivergedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
