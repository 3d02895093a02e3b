"""Command-line entry point: ``mgae <command> [flags]``.

Commands write into ``--out``: ``manifest.txt``, ``checkpoint.bin``,
``split.tsv``, ``train_log.csv``, ``metrics.csv`` and ``embeddings.tsv``.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import shlex
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .datasets import convert_linqs
from .errors import ConfigError, IntegrityError, MGAEError
from .evaluation import MetricsReport, classify_cv, link_prediction_report, node_readout
from .graph import (EdgeSplit, FeatureMatrix, canonicalize, learned_features, load_edge_list,
                    load_features, load_labels, read_split, split_edges, write_split)
from .training import TrainConfig, fit

DEFAULT_SPLITS = {"link": (0.85, 0.05, 0.10), "node": (0.9, 0.1, 0.0)}
DEFAULT_OMEGAS = tuple(round(0.1 * i, 1) for i in range(1, 10))


class UsageError(ConfigError):
    pass


# ------------------------------------------------------------------ parsing


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {value!r}")
    return value == "on"


def _floats(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from None


def _ints(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from None


def _add_data_flags(p: argparse.ArgumentParser, edges_required: bool) -> None:
    p.add_argument("--edges", required=edges_required, help="edge list, one 'u<TAB>v' per line")
    p.add_argument("--features", help="node feature CSV, row i = node i")
    p.add_argument("--learn-features", action="store_true",
                   help="train an embedding table when --features is missing")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--task", choices=("link", "node"), default="link",
                   help="selects the default edge split (link 85/5/10, node 90/10/0)")
    p.add_argument("--split", type=_floats, default=None, help="train,valid,test edge fractions")
    p.add_argument("--split-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--arch", choices=("gcn", "sage"), default=d.arch)
    p.add_argument("--decoder", choices=("cross", "inner"), default=d.decoder)
    p.add_argument("--mask-scheme", choices=("undirected", "directed"), default=d.scheme)
    p.add_argument("--layers", type=int, default=d.layers, help="encoder depth K")
    p.add_argument("--dim", type=int, default=d.dim, help="embedding width d")
    p.add_argument("--hidden", type=int, default=None, help="decoder MLP width (default d)")
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--negatives", type=int, default=d.negatives, help="negatives Q per masked edge")
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--remask-per-epoch", type=_on_off, default=d.remask_per_epoch, metavar="{on,off}")
    p.add_argument("--log-timing", type=_on_off, default=False, metavar="{on,off}",
                   help="record wall-clock columns (makes logs run-dependent)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--debug", action="store_true", help="assert leakage freedom every epoch")


def _add_checkpoint_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run", help="training output directory holding checkpoint.bin and split.tsv")
    p.add_argument("--checkpoint")
    p.add_argument("--split-file", help="split manifest written by 'train'")
    p.add_argument("--features")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgae", description="Masked graph autoencoder")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a graph and write a checkpoint")
    _add_data_flags(p, True)
    p.add_argument("--mask-ratio", type=float, default=TrainConfig().mask_ratio)
    _add_model_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-lp", help="test-split AUC/AP(/Hits@N) of a checkpoint")
    _add_checkpoint_flags(p)
    p.add_argument("--hits-n", type=_ints, default=())
    p.add_argument("--symmetric", action="store_true", help="average scores of (u,v) and (v,u)")
    p.add_argument("--log-timing", type=_on_off, default=False, metavar="{on,off}")
    p.add_argument("--out")

    p = sub.add_parser("eval-nc", help="cross-validated node classification on embeddings")
    _add_checkpoint_flags(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--graph", choices=("auto", "train", "all"), default="auto")
    p.add_argument("--verbose", action="store_true", help="include per-fold accuracies")
    p.add_argument("--log-timing", type=_on_off, default=False, metavar="{on,off}")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="train and evaluate over a grid of mask ratios")
    _add_data_flags(p, True)
    p.add_argument("--omegas", type=_floats, default=DEFAULT_OMEGAS)
    p.add_argument("--seeds", type=_ints, default=None, help="defaults to --seed")
    _add_model_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-embeddings", help="write the per-node layer concatenation")
    _add_checkpoint_flags(p)
    p.add_argument("--graph", choices=("auto", "train", "all"), default="auto")
    p.add_argument("--out", required=True, help="output TSV path or directory")

    p = sub.add_parser("prepare-linqs", help="convert LINQS .content/.cites files")
    p.add_argument("--content", required=True)
    p.add_argument("--cites", required=True)
    p.add_argument("--name", default="cora")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="override the recorded output location")
    return parser


# ----------------------------------------------------------------- helpers


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _resolved_argv(parser: argparse.ArgumentParser, args: argparse.Namespace) -> list[str]:
    """Every flag of the chosen command with its resolved value."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    cmd_parser = sub.choices[args.command]
    argv = [args.command]
    for action in cmd_parser._actions:
        if not action.option_strings or action.dest == "help":
            continue
        value = getattr(args, action.dest, None)
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif value is None or value == ():
            continue
        elif isinstance(value, bool):
            argv += [flag, "on" if value else "off"]
        elif isinstance(value, tuple):
            argv += [flag, ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)]
        else:
            argv += [flag, str(value)]
    return argv


def write_manifest(path, argv: list[str], fields: dict) -> None:
    lines = [f"version={__version__}", f"argv={shlex.join(argv)}"]
    lines += [f"{k}={v}" for k, v in fields.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key] = value
    return out


def _config_from_args(args, mask_ratio: float) -> TrainConfig:
    return TrainConfig(mask_ratio=mask_ratio, scheme=args.mask_scheme, layers=args.layers,
                       dim=args.dim, arch=args.arch, epochs=args.epochs, patience=args.patience,
                       negatives=args.negatives, lr=args.lr, batch_size=args.batch_size,
                       seed=args.seed, remask_per_epoch=args.remask_per_epoch, hidden=args.hidden,
                       decoder=args.decoder, debug=args.debug)


def _validate_training_flags(args) -> tuple[float, float, float]:
    ratios = args.split if args.split is not None else DEFAULT_SPLITS[args.task]
    if len(ratios) != 3:
        raise UsageError(f"--split needs three fractions, got {len(ratios)}")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    if args.features is None and not args.learn_features:
        raise UsageError("pass --features or --learn-features")
    return ratios


def _load_graph(args, ratios, seed: int) -> tuple[int, FeatureMatrix | None, EdgeSplit]:
    edges = load_edge_list(args.edges)
    n = edges.num_nodes
    features = None
    if args.features is not None and Path(args.features).exists():
        features = load_features(args.features)
        if edges.num_nodes > features.shape[0]:
            raise IntegrityError(f"edge ids reach {edges.num_nodes - 1} but only {features.shape[0]} feature rows")
        n = features.shape[0]
    elif not args.learn_features:
        raise FileNotFoundError(f"feature file not found: {args.features}")
    split = split_edges(edges.pairs, ratios, seed=seed, num_nodes=n)
    return n, features, split


def _features_for(n: int, features: FeatureMatrix | None, config: TrainConfig) -> FeatureMatrix:
    if features is not None:
        return features
    return learned_features(n, config.dim, np.random.default_rng([config.seed, 7]))


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_train_log(path, history, timing: bool) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,loss,val_auc,elapsed_ms\n")
        for r in history:
            elapsed = f"{r.elapsed_ms:.0f}" if timing else ""
            fh.write(f"{r.epoch},{_fmt(r.loss)},{_fmt(r.val_auc)},{elapsed}\n")


def _train_once(n, features, split, config):
    started = time.perf_counter()
    result = fit(n, _features_for(n, features, config), split, config)
    return result, time.perf_counter() - started


# ---------------------------------------------------------------- commands


def cmd_train(args, parser) -> int:
    ratios = _validate_training_flags(args)
    config = _config_from_args(args, args.mask_ratio)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    n, features, split = _load_graph(args, ratios, split_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_split(out / "split.tsv", split)
    result, seconds = _train_once(n, features, split, config)
    save_checkpoint(out / "checkpoint.bin", result.model, config,
                    {"task": args.task, "split_digest": _file_digest(out / "split.tsv"),
                     "best_epoch": result.state.best_epoch,
                     "best_val_metric": result.state.best_metric})
    write_train_log(out / "train_log.csv", result.state.history, args.log_timing)
    fields = {"command": "train", "config": json.dumps(config.to_dict(), sort_keys=True),
              "config_digest": config.digest(), "edges": args.edges, "features": args.features,
              "task": args.task, "split": ",".join(map(repr, ratios)), "split_seed": split_seed,
              "seed": config.seed, "out": str(out)}
    if args.log_timing:
        fields["wall_clock_s"] = f"{seconds:.3f}"
    write_manifest(out / "manifest.txt", _resolved_argv(parser, args), fields)
    print(f"trained {result.state.epoch} epochs; best epoch {result.state.best_epoch} "
          f"val {result.state.best_metric:.4f}; wrote {out}")
    return 0


def _resolve_run(args) -> tuple[Checkpoint, Path, Path]:
    run = Path(args.run) if args.run else None
    ckpt_path = Path(args.checkpoint) if args.checkpoint else (run / "checkpoint.bin" if run else None)
    split_path = Path(args.split_file) if args.split_file else (run / "split.tsv" if run else None)
    if ckpt_path is None or split_path is None:
        raise UsageError("pass --run or both --checkpoint and --split-file")
    ckpt = load_checkpoint(ckpt_path)
    expected = ckpt.meta.get("split_digest")
    if expected is not None and expected != _file_digest(split_path):
        raise IntegrityError(f"{split_path} is not the split {ckpt_path} was trained with")
    return ckpt, ckpt_path, split_path


def _model_for(ckpt: Checkpoint, args):
    features = None
    if not ckpt.meta.get("learned_features"):
        if not args.features:
            raise UsageError("this checkpoint needs --features")
        features = load_features(args.features, int(ckpt.meta["num_nodes"]))
    return ckpt.build(features)


def _default_out(args, fallback: Path) -> Path:
    return Path(args.out) if args.out else fallback


def cmd_eval_lp(args, parser) -> int:
    started = time.perf_counter()
    ckpt, ckpt_path, split_path = _resolve_run(args)
    if any(n < 1 for n in args.hits_n):
        raise UsageError("--hits-n values must be >= 1")
    split = read_split(split_path)
    if len(split.test) == 0:
        raise UsageError(f"{split_path} has no test edges to evaluate")
    model = _model_for(ckpt, args)
    stack = model.embed(split.train)
    pos = model.score(stack, split.test, symmetric=args.symmetric)
    neg = model.score(stack, split.test_neg, symmetric=args.symmetric)
    metrics = link_prediction_report(pos, neg, tuple(args.hits_n))
    meta = {"seed": ckpt.config.seed, "config_digest": ckpt.config.digest(),
            "checkpoint": ckpt_path.name, "split_digest": _file_digest(split_path),
            "mask_ratio": ckpt.config.mask_ratio, "arch": ckpt.config.arch}
    if args.log_timing:
        meta["wall_clock_s"] = f"{time.perf_counter() - started:.3f}"
    out = _default_out(args, ckpt_path.parent)
    out.mkdir(parents=True, exist_ok=True)
    MetricsReport("link_prediction", metrics, meta).write(out / "metrics.csv")
    print(" ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return 0


def _encoding_edges(split: EdgeSplit, ckpt: Checkpoint, choice: str) -> np.ndarray:
    if choice == "auto":
        choice = "all" if ckpt.meta.get("task") == "node" else "train"
    return split.train if choice == "train" else split.all_positive()


def cmd_eval_nc(args, parser) -> int:
    if args.folds < 2:
        raise UsageError("--folds must be >= 2 for cross-validation")
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    started = time.perf_counter()
    ckpt, ckpt_path, split_path = _resolve_run(args)
    split = read_split(split_path)
    model = _model_for(ckpt, args)
    labels = load_labels(args.labels, model.n)
    readout = node_readout(model.embed(_encoding_edges(split, ckpt, args.graph)))
    cv = classify_cv(readout, labels, folds=args.folds, seeds=range(args.repeats))
    metrics = {"accuracy": cv.mean, "accuracy_std": cv.std}
    if args.verbose:
        for i, acc in enumerate(cv.fold_accuracies):
            metrics[f"accuracy_r{i // args.folds}_f{i % args.folds}"] = acc
    meta = {"seed": ckpt.config.seed, "config_digest": ckpt.config.digest(),
            "checkpoint": ckpt_path.name, "folds": args.folds, "repeats": args.repeats}
    if args.log_timing:
        meta["wall_clock_s"] = f"{time.perf_counter() - started:.3f}"
    out = _default_out(args, ckpt_path.parent)
    out.mkdir(parents=True, exist_ok=True)
    MetricsReport("node_classification", metrics, meta).write(out / "metrics.csv")
    print(f"accuracy={cv.mean:.4f} +- {cv.std:.4f}")
    return 0


def _sweep_point(job):
    n, features, split, config = job
    result, _ = _train_once(n, features, split, config)
    stack = result.model.embed(split.train)
    m = link_prediction_report(result.model.score(stack, split.test),
                               result.model.score(stack, split.test_neg))
    return config.mask_ratio, config.seed, float(m["auc"]), float(m["ap"])


def cmd_sweep(args, parser) -> int:
    ratios = _validate_training_flags(args)
    seeds = args.seeds if args.seeds else (args.seed,)
    configs = [_config_from_args(argparse.Namespace(**{**vars(args), "seed": s}), w)
               for w in args.omegas for s in seeds]
    split_seed = args.seed if args.split_seed is None else args.split_seed
    jobs = []
    splits: dict[int, tuple] = {}
    for cfg in configs:
        key = split_seed if args.split_seed is not None else cfg.seed
        if key not in splits:
            splits[key] = _load_graph(args, ratios, key)
        n, features, split = splits[key]
        jobs.append((n, features, split, cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(job) for job in jobs]
    with open(out / "sweep_runs.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("omega,seed,auc,ap\n")
        for w, s, a, p in rows:
            fh.write(f"{w!r},{s},{a!r},{p!r}\n")
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("omega,auc,ap\n")
        for w in args.omegas:
            sel = [r for r in rows if r[0] == w]
            fh.write(f"{w!r},{float(np.mean([r[2] for r in sel]))!r},{float(np.mean([r[3] for r in sel]))!r}\n")
    fields = {"command": "sweep", "edges": args.edges, "features": args.features,
              "omegas": ",".join(map(repr, args.omegas)), "seeds": ",".join(map(str, seeds)),
              "out": str(out)}
    write_manifest(out / "manifest.txt", _resolved_argv(parser, args), fields)
    print((out / "sweep.csv").read_text(encoding="utf-8"), end="")
    return 0


def format_embeddings(readout: np.ndarray) -> str:
    return "".join(f"{i}\t" + "\t".join(f"{x:.12g}" for x in row) + "\n" for i, row in enumerate(readout))


def read_embeddings(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            tokens = line.rstrip("\n").split("\t")
            if int(tokens[0]) != i:
                raise IntegrityError(f"{path}: row {i} labelled node {tokens[0]}")
            rows.append([float(t) for t in tokens[1:]])
    return np.array(rows, dtype=np.float64)


def cmd_export(args, parser) -> int:
    ckpt, ckpt_path, split_path = _resolve_run(args)
    split = read_split(split_path)
    model = _model_for(ckpt, args)
    readout = node_readout(model.embed(_encoding_edges(split, ckpt, args.graph)))
    out = Path(args.out)
    if out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        out = out / "embeddings.tsv"
    out.write_text(format_embeddings(readout), encoding="utf-8")
    print(f"wrote {readout.shape[0]} x {readout.shape[1]} embeddings to {out}")
    return 0


def cmd_prepare(args, parser) -> int:
    s = convert_linqs(args.content, args.cites, args.out, args.name)
    print(f"{s.nodes} nodes, {s.features} features, {len(s.classes)} classes, "
          f"{s.citation_lines} citation lines ({s.dangling} dangling) -> {args.out}")
    return 0


def cmd_replay(args, parser) -> int:
    manifest = read_manifest(args.manifest)
    argv = shlex.split(manifest["argv"])
    if args.out:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = args.out
        else:
            argv += ["--out", args.out]
    return main(argv)


COMMANDS = {"train": cmd_train, "eval-lp": cmd_eval_lp, "eval-nc": cmd_eval_nc,
            "sweep": cmd_sweep, "export-embeddings": cmd_export, "prepare-linqs": cmd_prepare,
            "replay": cmd_replay}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, parser)
    except MGAEError as exc:
        print(f"mgae {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"mgae {args.command}: {exc}", file=sys.stderr)
        return 3
    except KeyError as exc:
        print(f"mgae {args.command}: malformed input, missing {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
