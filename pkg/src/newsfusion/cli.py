"""Command-line entry point.

Subcommands cover the full experiment workflow: corpus splitting, training,
evaluation, prediction, ablation sweeps, gradient checks, and synthetic-data
generation.  Exit codes: 0 success, 1 usage error, 2 data or validation
error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import evaluation, model as model_mod, synthgen
from .corpus import (
    DEFAULT_N_REGIONS,
    DatasetError,
    SplitAssignment,
    event_split,
    load_dataset,
    save_dataset,
)
from .model import (
    ABLATION_NAMES,
    ConfigError,
    ModelConfig,
    apply_ablation,
    fit,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .numerics import NumericsError, format_report, grad_check


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # map argparse's usage failures onto exit code 1 instead of its default 2
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="newsfusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", parents=[], help="assign posts to train/validation/test by event")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model and write checkpoint + history")
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset slice")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split")
    p.add_argument("--variant", default="test", help="which split slice to score")
    p.add_argument("--out")

    p = sub.add_parser("predict", help="write per-post predictions as JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="train the full model and the six ablations")
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--variant", action="append", help="restrict to named variants (repeatable)")

    p = sub.add_parser("gradcheck", help="finite-difference check of the toy configuration")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--kind", required=True, choices=synthgen.KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--d-visual", type=int, default=64, dest="d_visual")
    p.add_argument("--n-regions", type=int, default=49, dest="n_regions")

    return parser


# -- shared helpers ---------------------------------------------------------


def _load_config(path: Optional[str], seed_override: Optional[int]) -> ModelConfig:
    if path is None:
        config = ModelConfig()
    else:
        config = ModelConfig.from_json(Path(path).read_text(encoding="utf-8"))
    if seed_override is not None:
        config = dataclasses.replace(config, seed=seed_override)
    return config


def _sniff_n_regions(path: str) -> int:
    # the split command has no config to read the region count from
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            regions = json.loads(line).get("visual_regions")
            if regions:
                return len(regions)
    return DEFAULT_N_REGIONS


def _load_split(path: str) -> tuple[SplitAssignment, int]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or "by_id" not in raw:
        raise DatasetError(f"{path}: not a split file (missing 'by_id')")
    return SplitAssignment(by_id=dict(raw["by_id"])), int(raw.get("seed", 0))


def _write_split(assignment: SplitAssignment, seed: int, path: str) -> None:
    payload = {"seed": seed, "ratios": [3, 1, 1], "by_id": assignment.by_id}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _history_csv(history) -> str:
    lines = ["epoch,train_loss,val_acc,val_f1"]
    for row in history:
        lines.append(f"{row.epoch},{row.train_loss:.9g},{row.val_acc:.9g},{row.val_f1:.9g}")
    return "\n".join(lines) + "\n"


def _manifest(command: str, config: ModelConfig, data: str, split: str, split_seed: int,
              outputs: dict) -> dict:
    body = {
        "command": command,
        "config": config.to_dict(),
        "data": data,
        "split": split,
        "split_seed": split_seed,
        "outputs": outputs,
    }
    blob = json.dumps(body, sort_keys=True).encode("utf-8")
    body["run_id"] = hashlib.blake2b(blob, digest_size=8).hexdigest()
    return body


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _score_posts(trained, posts):
    predictions = [predict(p, trained) for p in posts]
    labels = [p.label for p in posts]
    return predictions, labels


# -- subcommands ------------------------------------------------------------


def _cmd_split(args) -> int:
    posts = load_dataset(args.data, n_regions=_sniff_n_regions(args.data))
    assignment = event_split(posts, seed=args.seed)
    _write_split(assignment, args.seed, args.out)
    counts = {name: len(assignment.ids_for(name)) for name in SplitAssignment.SPLITS}
    print(f"split {len(posts)} posts: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _train_one(config: ModelConfig, train_posts, val_posts, out_dir: Path, log=None):
    trained = init_model(config)
    history = fit(train_posts, val_posts, trained, log=log)
    save_checkpoint(trained, out_dir / "model.ckpt")
    (out_dir / "history.csv").write_text(_history_csv(history), encoding="utf-8")
    return trained, history


def _cmd_train(args) -> int:
    config = _load_config(args.config, args.seed)
    posts = load_dataset(args.data, n_regions=config.n_regions)
    assignment, split_seed = _load_split(args.split)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    outputs = {"checkpoint": "model.ckpt", "history": "history.csv", "config": "config.json"}
    manifest = _manifest("train", config, args.data, args.split, split_seed, outputs)
    # the manifest lands on disk before any training work starts
    _write_json(out_dir / "manifest.json", manifest)
    _write_json(out_dir / "config.json", config.to_dict())

    train_posts = assignment.subset(posts, "train")
    val_posts = assignment.subset(posts, "validation")
    _, history = _train_one(config, train_posts, val_posts, out_dir, log=print)
    best = max((row.val_acc for row in history), default=0.0)
    print(f"run {manifest['run_id']}: {len(history)} epochs, best val_acc {best:.4f}")
    return 0


def _cmd_evaluate(args) -> int:
    trained = load_checkpoint(args.checkpoint)
    posts = load_dataset(args.data, n_regions=trained.config.n_regions)
    title = f"all posts ({len(posts)})"
    if args.split is not None:
        assignment, _ = _load_split(args.split)
        if args.variant not in SplitAssignment.SPLITS:
            raise UsageError(f"unknown split slice {args.variant!r}")
        posts = assignment.subset(posts, args.variant)
        title = f"{args.variant} slice ({len(posts)} posts)"
    predictions, labels = _score_posts(trained, posts)
    metrics = evaluation.confusion_metrics(predictions, labels)
    print(evaluation.metrics_table(metrics, title=title))

    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(evaluation.metrics_json(metrics) + "\n", encoding="utf-8")
        _write_predictions(out_dir / "predictions.jsonl", predictions)
        if len(set(labels)) == 2:
            scores = [p.p_fake for p in predictions]
            points = evaluation.roc_curve(scores, labels)
            (out_dir / "roc.csv").write_text(evaluation.roc_csv(points), encoding="utf-8")
            print(f"auc {evaluation.auc(points):.6f}")
        else:
            print("single-class slice: roc.csv skipped")
    return 0


def _write_predictions(path: Path, predictions) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps(
                {"id": p.id, "p_real": p.p_real, "p_fake": p.p_fake, "label_pred": p.label_pred},
                separators=(",", ":"),
            ) + "\n")


def _cmd_predict(args) -> int:
    trained = load_checkpoint(args.checkpoint)
    posts = load_dataset(args.data, n_regions=trained.config.n_regions)
    predictions = [predict(p, trained) for p in posts]
    _write_predictions(Path(args.out), predictions)
    print(f"wrote {len(predictions)} predictions to {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    config = _load_config(args.config, args.seed)
    posts = load_dataset(args.data, n_regions=config.n_regions)
    assignment, split_seed = _load_split(args.split)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    variants = ["full model", *ABLATION_NAMES]
    if args.variant:
        unknown = [v for v in args.variant if v not in variants]
        if unknown:
            raise UsageError(f"unknown variants: {', '.join(unknown)}")
        variants = [v for v in variants if v in args.variant]

    outputs = {"table": "ablation.csv"}
    manifest = _manifest("ablate", config, args.data, args.split, split_seed, outputs)
    manifest["variants"] = variants
    _write_json(out_dir / "manifest.json", manifest)

    train_posts = assignment.subset(posts, "train")
    val_posts = assignment.subset(posts, "validation")
    test_posts = assignment.subset(posts, "test")

    rows = []
    for name in variants:
        variant_config = config if name == "full model" else apply_ablation(config, name)
        run_dir = out_dir / name.replace(" ", "_").replace("/", "-")
        run_dir.mkdir(exist_ok=True)
        trained, _ = _train_one(variant_config, train_posts, val_posts, run_dir)
        predictions, labels = _score_posts(trained, test_posts)
        metrics = evaluation.confusion_metrics(predictions, labels)
        rows.append((name, metrics))
        print(f"{name}: acc {metrics.accuracy:.4f} f1 {metrics.f1:.4f}")

    width = max(len(name) for name, _ in rows)
    lines = [f"{'variant':<{width}}  {'Acc':>7} {'Prec':>7} {'Recall':>7} {'F1':>7}"]
    for name, m in rows:
        lines.append(
            f"{name:<{width}}  {m.accuracy:>7.4f} {m.precision:>7.4f} {m.recall:>7.4f} {m.f1:>7.4f}"
        )
    table = "\n".join(lines)
    print(table)

    csv_lines = ["variant,accuracy,precision,recall,f1"]
    for name, m in rows:
        csv_lines.append(f"{name},{m.accuracy:.9g},{m.precision:.9g},{m.recall:.9g},{m.f1:.9g}")
    (out_dir / "ablation.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    return 0


def _cmd_gradcheck(args) -> int:
    toy, _, loss_fn = model_mod.toy_gradcheck_setup()
    report = grad_check(toy.store, loss_fn, rng=np.random.default_rng(args.seed))
    print(format_report(report))
    if not report.passed:
        raise NumericsError("gradient check failed")
    return 0


def _cmd_synth(args) -> int:
    posts = synthgen.generate(args.kind, args.n, seed=args.seed,
                              d_visual=args.d_visual, n_regions=args.n_regions)
    save_dataset(posts, args.out)
    print(f"wrote {len(posts)} {args.kind} posts to {args.out}")
    return 0


_COMMANDS = {
    "split": _cmd_split,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        # DatasetError and ConfigError are ValueError subclasses
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
