"""Command-line entry point: train, eval, ensemble, bench, and split.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .baselines import BaselineConfig, build_baseline
from .capsule import CapsNet, CapsNetConfig, benchmark_csv, routing_benchmark
from .checkpoint import build_model, load_checkpoint
from .data import apply_manifest, load_directory_corpus, load_idx, split
from .ensemble import evaluate
from .errors import ContractError, DataError, ShapeError, TrainingError
from .train import TrainRun, train_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _load_dataset(spec: str):
    kind, _, rest = spec.partition(":")
    if kind == "dir" and rest:
        samples, class_names = load_directory_corpus(rest)
        return samples, class_names
    if kind == "idx" and rest:
        parts = rest.split(",")
        if len(parts) != 2:
            raise ContractError(f"--data idx: needs IMAGES,LABELS, got {spec!r}")
        samples = load_idx(parts[0], parts[1])
        n_class = max(s.label for s in samples) + 1
        return samples, [str(c) for c in range(n_class)]
    raise ContractError(f"--data must be dir:PATH or idx:IMAGES,LABELS, got {spec!r}")


def _build_model(args, n_class: int):
    if args.model == "capsnet":
        config = CapsNetConfig(n_class=n_class, routing_iterations=args.routing_iters)
        return CapsNet(config, seed=args.seed)
    return build_baseline(BaselineConfig(args.model, n_class), seed=args.seed)


def _cmd_train(args) -> int:
    samples, class_names = _load_dataset(args.data)
    manifest = split(samples, seed=args.seed, class_names=class_names)
    train_samples, test_samples = apply_manifest(samples, manifest)
    model = _build_model(args, manifest.n_class)
    run = TrainRun(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        checkpoint_path=args.checkpoint,
        curve_path=args.curve,
    )
    result = train_model(model, train_samples, test_samples, run)
    last = result.curve[-1]
    print(f"trained {args.model} for {len(result.curve)} epochs on {len(train_samples)} samples")
    print(f"best train accuracy {result.best_train_accuracy:.4f} at epoch {result.best_epoch}")
    print(f"final test accuracy {last.test_accuracy:.4f}")
    if args.checkpoint:
        print(f"checkpoint written to {args.checkpoint}")
    if args.curve:
        print(f"learning curve written to {args.curve}")
    return EXIT_OK


def _eval_samples(args):
    samples, _ = _load_dataset(args.data)
    if args.full_data:
        return samples
    manifest = split(samples, seed=args.seed)
    _, test_samples = apply_manifest(samples, manifest)
    return test_samples


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = build_model(ckpt)
    samples = _eval_samples(args)
    report = evaluate([model], samples)
    print(f"model {ckpt.model_kind} (epoch {ckpt.epoch}) on {len(samples)} samples")
    print(f"accuracy {report.accuracy:.4f}")
    for c, acc in enumerate(report.per_class_accuracy):
        total = int(report.confusion[c].sum())
        print(f"class {c}: {acc:.4f} ({total} samples)")
    return EXIT_OK


def _cmd_ensemble(args) -> int:
    if len(args.checkpoints) < 2:
        raise ContractError("ensemble needs at least two checkpoints")
    models = [build_model(load_checkpoint(p)) for p in args.checkpoints]
    weights = None
    if args.weights:
        weights = [float(w) for w in args.weights.split(",")]
        if len(weights) != len(models):
            raise ContractError(f"got {len(weights)} weights for {len(models)} models")
    samples = _eval_samples(args)
    report = evaluate(models, samples, weights=weights)
    scheme = "uniform" if weights is None else "weights " + ",".join(repr(w) for w in weights)
    print(f"ensemble of {len(models)} models on {len(samples)} samples ({scheme} weighting)")
    for path, acc in zip(args.checkpoints, report.per_model_accuracy):
        print(f"member {path}: accuracy {acc:.4f}")
    print(f"combined accuracy {report.accuracy:.4f}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    config = CapsNetConfig(n_class=args.n_class)
    rows = routing_benchmark(config, repetitions=args.repetitions, seed=args.seed)
    csv = benchmark_csv(rows)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(csv)
        print(f"benchmark written to {args.output}")
    else:
        print(csv, end="")
    return EXIT_OK


def _cmd_split(args) -> int:
    samples, class_names = _load_dataset(args.data)
    manifest = split(samples, seed=args.seed, class_names=class_names)
    text = manifest.to_text(samples)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
        print(f"manifest written to {args.output} ({len(manifest.train_ids)} train, {len(manifest.test_ids)} test)")
    else:
        print(text, end="")
    return EXIT_OK


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dir:PATH or idx:IMAGES,LABELS")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capsnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and export checkpoint + learning curve")
    _add_data_flags(p)
    p.add_argument("--model", choices=("capsnet", "lenet", "alexnet"), default="capsnet")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--routing-iters", type=int, default=3)
    p.add_argument("--checkpoint", help="path for the best-train-accuracy checkpoint")
    p.add_argument("--curve", help="path for the learning-curve CSV")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--full-data", action="store_true", help="evaluate on all samples, not the 2:1 test part")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ensemble", help="combine checkpoints by probability averaging")
    _add_data_flags(p)
    p.add_argument("checkpoints", nargs="+", help="two or more checkpoint paths")
    p.add_argument("--weights", help="comma-separated member weights (default uniform)")
    p.add_argument("--full-data", action="store_true")
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("bench", help="routing cost benchmark CSV")
    p.add_argument("--n-class", type=int, default=10)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="CSV path (default stdout)")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("split", help="materialize a 2:1 train/test manifest")
    _add_data_flags(p)
    p.add_argument("--output", help="manifest path (default stdout)")
    p.set_defaults(func=_cmd_split)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ContractError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
