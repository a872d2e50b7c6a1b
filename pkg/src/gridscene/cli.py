"""Command-line workflow: build data, pretrain, train, generate, evaluate.

Every subcommand resolves its settings from an optional JSON config plus
`--set key=value` overrides, then writes the resolved values next to its
outputs as `resolved_config.json` so any run can be repeated exactly.

Exit codes: 0 success, 2 validation problem, 3 I/O problem, 4 numeric
failure (divergence or non-finite values).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autoencoder import Autoencoder, pretrain, save_autoencoder
from .classifier import save_classifier, train_cell_classifier
from .config import (
    AeConfig,
    ClassifierConfig,
    TrainConfig,
    apply_overrides,
    config_to_json,
    load_config,
)
from .gridsets import build_grid_dataset, load_manifest, load_split
from .imageio import read_image, write_image
from .scenegraph import SceneGraphError, parse_scene_graph
from .sources import (
    CIFAR_LABEL_NAMES,
    MNIST_LABEL_NAMES,
    load_cifar10,
    load_mnist_idx,
    resize_cell,
    synthesize_cifar_style,
    synthesize_mnist_style,
)
from .tensor import ContractError
from .training import (
    ablation_csv,
    evaluate_checkpoint,
    generate_from_graph,
    run_ablation,
    train_model,
)

SOURCES = ("mnist", "cifar10")


def _echo_config(out_dir, command: str, settings: dict) -> None:
    """Drop the fully resolved settings beside the outputs for exact reruns."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **settings}
    (out_dir / "resolved_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _build_config(cls, args, **flag_overrides):
    cfg = load_config(cls, args.config) if args.config else cls()
    if args.set:
        apply_overrides(cfg, args.set)
    for key, value in flag_overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


def _parse_dims(text: str) -> tuple[int, int]:
    rows, sep, cols = text.lower().partition("x")
    if not sep or not rows.isdigit() or not cols.isdigit():
        raise ContractError(f"--dims expects ROWSxCOLS like 2x2, got {text!r}")
    return int(rows), int(cols)


def _load_sources(args, out_dir: Path, seed: int):
    """Load a source corpus from files, or synthesize one deterministically."""
    if args.source == "mnist":
        if args.images and args.labels:
            return load_mnist_idx(args.images, args.labels), MNIST_LABEL_NAMES
        if args.images or args.labels:
            raise ContractError("mnist sources need both --images and --labels")
        img, lab = out_dir / "source_images.idx", out_dir / "source_labels.idx"
        synthesize_mnist_style(args.source_count, seed, img, lab)
        return load_mnist_idx(img, lab), MNIST_LABEL_NAMES
    if args.batches:
        return load_cifar10(args.batches.split(",")), CIFAR_LABEL_NAMES
    batch = out_dir / "source_batch.bin"
    synthesize_cifar_style(args.source_count, seed, batch)
    return load_cifar10([batch]), CIFAR_LABEL_NAMES


def cmd_synth_source(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.source == "mnist":
        paths = [out_dir / "images.idx", out_dir / "labels.idx"]
        synthesize_mnist_style(args.count, args.seed, *paths)
    else:
        paths = [out_dir / "batch.bin"]
        synthesize_cifar_style(args.count, args.seed, paths[0])
    _echo_config(out_dir, "synth-source", {
        "source": args.source, "count": args.count, "seed": args.seed,
        "files": [str(p) for p in paths],
    })
    print(f"wrote {args.count} {args.source}-style cells: {', '.join(str(p) for p in paths)}")
    return 0


def cmd_dataset(args) -> int:
    rows, cols = _parse_dims(args.dims)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources, label_names = _load_sources(args, out_dir, args.seed)
    try:
        manifest = build_grid_dataset(
            sources, rows, cols, count=args.count, seed=args.seed,
            out_dir=out_dir, source_name=args.source, cell=args.cell,
            label_names=label_names,
        )
    except ValueError as e:
        raise ContractError(f"cannot split --count {args.count}: {e}") from e
    _echo_config(out_dir, "dataset", {
        "source": args.source, "dims": f"{rows}x{cols}", "count": args.count,
        "cell": args.cell, "seed": args.seed,
        "images": args.images, "labels": args.labels, "batches": args.batches,
        "source_count": args.source_count,
    })
    splits = {s: manifest["splits"][s]["count"] for s in ("train", "val", "test")}
    print(f"dataset at {out_dir}: {manifest['count']} records {splits}")
    return 0


def _split_images(dataset_dir, manifest, split: str) -> list:
    """Every supervision target of a split: intermediates plus finals."""
    images = []
    for record in load_split(dataset_dir, manifest, split):
        images.extend(record.targets())
    return images


def cmd_pretrain_ae(args) -> int:
    cfg = _build_config(AeConfig, args, seed=args.seed)
    manifest = load_manifest(args.data)
    height = manifest["rows"] * manifest["cell"]
    width = manifest["cols"] * manifest["cell"]
    images = _split_images(args.data, manifest, "train")
    ae = Autoencoder(
        height, width, manifest["channels"], np.random.default_rng(cfg.seed),
        widths=cfg.widths, bottleneck=cfg.bottleneck, dtype=np.dtype(cfg.dtype),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve = pretrain(
        ae, images, epochs=cfg.epochs, batch_size=cfg.batch_size,
        lr=cfg.learning_rate, lr_decay=cfg.lr_decay, seed=cfg.seed, log=print,
    )
    ckpt = out_dir / "ae.ckpt"
    save_autoencoder(ckpt, ae, meta_extra={"dataset": str(args.data), "epochs": cfg.epochs})
    lines = ["epoch,recon_mse"] + [f"{i},{m}" for i, m in enumerate(curve)]
    (out_dir / "ae_curve.csv").write_text("\n".join(lines) + "\n")
    _echo_config(out_dir, "pretrain-ae", {
        "data": str(args.data), "config": json.loads(config_to_json(cfg)),
        "images": len(images),
    })
    final = curve[-1] if curve else float("nan")
    print(f"autoencoder saved to {ckpt} (train recon MSE {final:.6f})")
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _build_config(ClassifierConfig, args, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources, _ = _load_sources(args, out_dir, cfg.seed)
    cells = [resize_cell(s.pixels, args.cell) for s in sources]
    labels = [s.label for s in sources]
    clf, accuracy, curve = train_cell_classifier(cells, labels, cfg, log=print)
    ckpt = out_dir / "classifier.ckpt"
    save_classifier(ckpt, clf, accuracy)
    _echo_config(out_dir, "train-classifier", {
        "source": args.source, "cell": args.cell,
        "config": json.loads(config_to_json(cfg)), "cells": len(cells),
        "held_out_accuracy": accuracy,
    })
    print(f"classifier saved to {ckpt} (held-out accuracy {accuracy:.4f})")
    if accuracy < 0.95:
        print(
            "warning: accuracy below the 0.95 gate; metric runs will refuse "
            "this checkpoint (train with more cells or epochs)",
        )
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(
        TrainConfig, args, seed=args.seed, out_dir=args.out, epochs=args.epochs
    )
    if not cfg.dataset_dir:
        raise ContractError("set dataset_dir in the config or via --set dataset_dir=...")
    out_dir = Path(cfg.out_dir or ".")
    _echo_config(out_dir, "train", {
        "config": json.loads(config_to_json(cfg)), "resume": args.resume,
    })
    result = train_model(cfg, resume=args.resume, log=print)
    print(f"final checkpoint: {result.last_path}")
    print(f"best-validation checkpoint: {result.best_path} (val MSE {result.best_val:.6f})")
    return 0


def cmd_generate(args) -> int:
    graph = parse_scene_graph(Path(args.graph).read_text())
    partial = read_image(args.partial) if args.partial else None
    images, trace = generate_from_graph(
        args.ckpt, graph, partial=partial, filled=args.filled
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if images[0].shape[2] == 1 else "ppm"
    files = []
    for i, img in enumerate(images, start=1):
        path = out_dir / f"step_{i}.{ext}"
        write_image(path, img)
        files.append(str(path))
    final_path = out_dir / f"final.{ext}"
    write_image(final_path, images[-1])
    trace = {**trace, "files": files, "final": str(final_path)}
    (out_dir / "trace.json").write_text(json.dumps(trace, indent=1, sort_keys=True) + "\n")
    _echo_config(out_dir, "generate", {
        "ckpt": str(args.ckpt), "graph": str(args.graph),
        "partial": args.partial and str(args.partial), "filled": args.filled,
    })
    print(f"{trace['steps']} step images in {out_dir} (variant {trace['variant']})")
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate_checkpoint(
        args.ckpt, split=args.split, classifier_path=args.classifier,
        dataset_dir=args.data,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    (out_dir / "report.csv").write_text(report.to_csv())
    _echo_config(out_dir, "evaluate", {
        "ckpt": str(args.ckpt), "split": args.split,
        "classifier": args.classifier and str(args.classifier),
        "data": args.data and str(args.data),
    })
    print(report.table())
    return 0


def cmd_ablate(args) -> int:
    cfg = _build_config(TrainConfig, args, seed=args.seed)
    if not cfg.dataset_dir:
        raise ContractError("set dataset_dir in the config or via --set dataset_dir=...")
    out_dir = Path(args.out)
    _echo_config(out_dir, "ablate", {"config": json.loads(config_to_json(cfg))})
    rows = run_ablation(cfg, out_dir, log=print)
    csv_path = out_dir / "ablation.csv"
    csv_path.write_text(ablation_csv(rows))
    for row in rows:
        print(
            f"{row['run']:<22} layers={row['layers']} heads={row['heads']} "
            f"ssim={row['ssim']:.4f} mse={row['mse']:.6f}"
        )
    print(f"combined table: {csv_path}")
    return 0


def _add_common(sub, config=True):
    if config:
        sub.add_argument("--config", help="JSON config file")
        sub.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override one config field (repeatable)",
        )
    sub.add_argument("--seed", type=int, default=None, help="seed override")


def _add_source_flags(sub):
    sub.add_argument("--source", choices=SOURCES, default="mnist")
    sub.add_argument("--images", help="IDX image file (mnist)")
    sub.add_argument("--labels", help="IDX label file (mnist)")
    sub.add_argument("--batches", help="comma-separated CIFAR-10 batch files")
    sub.add_argument(
        "--source-count", type=int, default=600,
        help="cells to synthesize when no source files are given",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridscene",
        description="scene-graph conditioned grid-image generation toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("synth-source", help="write a synthetic source-cell corpus")
    s.add_argument("--source", choices=SOURCES, default="mnist")
    s.add_argument("--count", type=int, default=600)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_source)

    s = subs.add_parser("dataset", help="build a grid-record dataset")
    _add_source_flags(s)
    s.add_argument("--dims", default="2x2", help="grid shape ROWSxCOLS")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--cell", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dataset)

    s = subs.add_parser("pretrain-ae", help="pretrain the frozen autoencoder")
    _add_common(s)
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain_ae)

    s = subs.add_parser("train-classifier", help="train the cell-label classifier")
    _add_common(s)
    _add_source_flags(s)
    s.add_argument("--cell", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_classifier)

    s = subs.add_parser("train", help="train a generation model")
    _add_common(s)
    s.add_argument("--out", default=None, help="output directory (config out_dir)")
    s.add_argument("--epochs", type=int, default=None, help="epoch override")
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = subs.add_parser("generate", help="generate step images for one graph")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--graph", required=True, help="scene-graph JSON file")
    s.add_argument("--partial", default=None, help="partial rendering image (PGM/PPM)")
    s.add_argument("--filled", type=int, default=0, help="cells already filled in --partial")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = subs.add_parser("evaluate", help="score a checkpoint on a dataset split")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--classifier", default=None, help="cell classifier checkpoint")
    s.add_argument("--data", default=None, help="dataset directory override")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = subs.add_parser("ablate", help="variant table plus layer/head sweep")
    _add_common(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, SceneGraphError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except ArithmeticError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
