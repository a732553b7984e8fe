"""Command-line entry point: gen, train, eval, ablate, rank, spectrum.

Every subcommand is deterministic given its config and seed, emits
machine-readable JSON or CSV stamped with a hash of the effective
configuration, and prints a short human-readable summary.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .ndtensor import load_tensor, radial_spectrum
from .synthdata import (
    STREAM_ORDER,
    EvalSample,
    Stream,
    denormalize_target,
    read_dataset,
    write_dataset,
)
from .model import Task
from .trainer import (
    TrainConfig,
    ablation_base_config,
    predict_fn_from_checkpoint,
    run_ablation,
    run_experiment,
)
from .evalkit import compute_rankings, evaluate, load_rank_table, render_markdown

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

THREADS_ENV = "SPECTRAL_PGD_THREADS"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argparse variant that reserves exit code 1 for usage problems."""

    def error(self, message):
        raise _UsageError(message)


def _hash_config(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _worker_thread_cap() -> int:
    """Honor the documented thread-cap variable; generation is sequential,
    so any positive cap is satisfied by the single worker in use."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ValueError(f"{THREADS_ENV} must be positive, got {cap}")
    return min(cap, 1)


def _load_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid JSON in {path}: {exc}")


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


# -- gen ---------------------------------------------------------------------------

_GEN_DEFAULTS = {"count": 16, "stream": "syn_indoor", "task": "depth", "seed": 0}


def cmd_gen(args) -> int:
    spec = dict(_GEN_DEFAULTS)
    if args.config:
        loaded = _load_json(args.config)
        unknown = set(loaded) - set(spec)
        if unknown:
            raise ValueError(f"unknown dataset config keys: {sorted(unknown)}")
        spec.update(loaded)
    if args.seed is not None:
        spec["seed"] = args.seed
    if args.count is not None:
        spec["count"] = int(args.count)
    if args.stream is not None:
        spec["stream"] = args.stream
    if spec["count"] < 1:
        raise ValueError("count must be positive")
    stream = Stream(spec["stream"])
    task = Task(spec["task"])
    out = Path(args.out)
    seeds = [int(spec["seed"]) + i for i in range(int(spec["count"]))]
    write_dataset(out, seeds, stream, task=task)
    payload = {"command": "gen", **spec}
    report = {
        "config_hash": _hash_config(payload),
        "config": payload,
        "count": len(seeds),
        "worker_threads": _worker_thread_cap(),
    }
    (out / "gen_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _say(args, f"wrote {len(seeds)} {stream.value} samples to {out} "
               f"[config {report['config_hash']}]")
    return EXIT_OK


# -- train -------------------------------------------------------------------------

def _train_config_from_args(args, default: TrainConfig | None = None) -> TrainConfig:
    cfg = default or TrainConfig()
    if args.config:
        cfg = TrainConfig.from_json_dict(_load_json(args.config))
    if args.seed is not None:
        cfg = TrainConfig.from_json_dict({**cfg.to_json_dict(), "seed": args.seed})
    return cfg


def cmd_train(args) -> int:
    cfg = _train_config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_config.json").write_text(
        json.dumps({"config_hash": cfg.config_hash(), **cfg.to_json_dict()},
                   indent=2, sort_keys=True) + "\n")
    report = run_experiment(cfg, out_dir=out, quiet=args.quiet)
    real = report["metrics"]["real_holdout"]
    _say(args, f"trained {cfg.steps} steps ({report['param_count']} parameters) "
               f"in {report['runtime_seconds']:.1f}s [config {cfg.config_hash()}]")
    _say(args, f"holdout AbsRel {real['absrel']:.3f}%  delta1 {real['delta1']:.3f}%  "
               f"({real['count']} scored, {real['degenerate_count']} degenerate)")
    return EXIT_OK


# -- eval --------------------------------------------------------------------------

def _dataset_eval_samples(directory: Path) -> list[EvalSample]:
    samples, _ = read_dataset(directory)
    out = []
    for sample in samples:
        if sample.task is not Task.DEPTH:
            raise ValueError("only depth datasets can be scored")
        if sample.norm.degenerate:
            continue
        reference = denormalize_target(sample.target.data[0], sample.norm)
        out.append(EvalSample(image=sample.image, gt_disparity=reference,
                              stream=sample.stream, scene_seed=sample.scene_seed))
    if not out:
        raise ValueError(f"no scorable samples in {directory}")
    return out


def cmd_eval(args) -> int:
    checkpoint = Path(args.checkpoint)
    data = Path(args.data)
    if not (checkpoint / "manifest.json").exists():
        raise FileNotFoundError(f"no checkpoint manifest under {checkpoint}")
    if not (data / "index.json").exists():
        raise FileNotFoundError(f"no dataset index under {data}")
    predict_fn = predict_fn_from_checkpoint(checkpoint)
    eval_samples = _dataset_eval_samples(data)
    set_name = data.name or "dataset"
    report = evaluate(predict_fn, {set_name: eval_samples})
    manifest = json.loads((checkpoint / "manifest.json").read_text())
    payload = {"command": "eval", "checkpoint": str(checkpoint), "data": str(data),
               "train_config": manifest.get("extra", {}).get("train_config")}
    result = {
        "config_hash": _hash_config(payload),
        "checkpoint": str(checkpoint),
        "data": str(data),
        "metrics": report.to_dict(),
    }
    metrics = report.per_set[set_name]
    _say(args, f"{set_name}: AbsRel {metrics.absrel:.3f}%  delta1 {metrics.delta1:.3f}%  "
               f"({metrics.count} scored, {metrics.degenerate_count} degenerate) "
               f"[config {result['config_hash']}]")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(
            json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- ablate ------------------------------------------------------------------------

def cmd_ablate(args) -> int:
    base = _train_config_from_args(args, default=ablation_base_config())
    seeds = tuple(int(s) for s in args.seeds.split(","))
    variants = tuple(args.variants) if args.variants else None
    report = run_ablation(base, seeds=seeds, out_dir=Path(args.out),
                          quiet=args.quiet, include_grid=args.grid,
                          variants=variants)
    _say(args, f"ablation over variants {sorted(report['variants'])} "
               f"[config {report['config_hash']}]")
    for key, entry in report["variants"].items():
        _say(args, f"  ({key}) {entry['label']}: median real AbsRel "
                   f"{entry['median_real_absrel']:.3f}%")
    for name, holds in report["orderings"].items():
        _say(args, f"  {name}: {holds}")
    return EXIT_OK


# -- rank --------------------------------------------------------------------------

def cmd_rank(args) -> int:
    table = load_rank_table(args.table)
    ranking = compute_rankings(table, tie_rule=args.tie_rule)
    payload = {"command": "rank", "table": str(args.table) if args.table else "builtin",
               "tie_rule": args.tie_rule}
    result = {
        "config_hash": _hash_config(payload),
        "tie_rule": args.tie_rule,
        "all_avg": {m: float(r) for m, r in zip(ranking.methods, ranking.all_avg)},
        "group_avg": {m: float(r) for m, r in zip(ranking.methods, ranking.group_avg)},
    }
    if not args.quiet:
        print(render_markdown(table, ranking))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rankings.json").write_text(
            json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- spectrum ----------------------------------------------------------------------

def cmd_spectrum(args) -> int:
    base = Path(args.input)
    arr = load_tensor(base)
    if arr.ndim < 2:
        raise ValueError(f"need at least a 2-D signal, got shape {arr.shape}")
    flat = arr.reshape((-1,) + arr.shape[-2:]) if arr.ndim > 2 else arr[None]
    curves = []
    edges = None
    for plane in flat:
        edges, cumulative = radial_spectrum(plane, num_bins=args.bins)
        curves.append(cumulative)
    cumulative = np.mean(curves, axis=0)
    payload = {"command": "spectrum", "input": str(base), "bins": int(args.bins)}
    config_hash = _hash_config(payload)
    lines = [f"# config_hash={config_hash}", "edge,cumulative_energy"]
    lines += [f"{e:.8f},{c:.10f}" for e, c in zip(edges, cumulative)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        _say(args, f"wrote {args.bins}-bin cumulative spectrum to {args.out} "
                   f"[config {config_hash}]")
    else:
        print(text, end="")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="spectral-pgd",
                     description="Spectral-gated two-stage depth toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--out", type=Path, required=out_required, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--quiet", action="store_true", help="suppress summaries")

    p = sub.add_parser("gen", help="materialize a procedural dataset")
    common(p)
    p.add_argument("--count", type=int, default=None, help="number of samples")
    p.add_argument("--stream", choices=[s.value for s in STREAM_ORDER], default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train one configuration")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against a dataset")
    common(p, out_required=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the experiment variants")
    common(p)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p.add_argument("--variants", default=None,
                   help="subset of variant letters, e.g. befg (default: all)")
    p.add_argument("--grid", action="store_true", help="also run the loss-weight grid")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("rank", help="aggregate benchmark ranks from a fixture table")
    common(p, out_required=False)
    p.add_argument("--table", type=Path, default=None, help="CSV fixture path")
    p.add_argument("--tie-rule", choices=("average", "min"), default="average")
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("spectrum", help="cumulative radial spectrum of a saved tensor")
    common(p, out_required=False)
    p.add_argument("--input", type=Path, required=True, help="tensor base path")
    p.add_argument("--bins", type=int, default=32)
    p.set_defaults(fn=cmd_spectrum)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        _worker_thread_cap()
        return args.fn(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
