"""Grid dataset synthesis and on-disk records.

A record is an N x M grid composed of 16x16 area-averaged source cells, the
scene graph describing it (adjacent-pair relations over row-major node ids),
the random order in which cells were pasted, and the N*M - 1 intermediate
canvases produced by pasting one cell at a time onto black.  Records are
deterministic functions of (sources, seed + record_index).

On disk: <out>/<split>/<index>/ holding graph.json, final.pgm|ppm,
step_1..step_{K-1}, and meta.json, plus a top-level manifest.json.  Images
are stored 8-bit, so a written record read back equals the original after
quantization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import quantize, read_image, write_image
from .scenegraph import GridLayout, SceneGraph, graph_from_layout, parse_scene_graph, serialize_scene_graph
from .sources import SourceImage, resize_cell

SPLITS = ("train", "val", "test")


@dataclass
class GridRecord:
    graph: SceneGraph
    layout: GridLayout
    placement_order: tuple[int, ...]  # node ids in paste order
    final: np.ndarray  # (rows*cell, cols*cell, C)
    intermediates: list[np.ndarray]  # K-1 partial canvases, paste prefixes
    seed: int

    @property
    def steps(self) -> int:
        """Supervised generation steps: every intermediate plus the final."""
        return len(self.intermediates) + 1

    def targets(self) -> list[np.ndarray]:
        return [*self.intermediates, self.final]


def synthesize_record(
    sources: list[SourceImage],
    rows: int,
    cols: int,
    rng,
    cell: int = 16,
    label_names=None,
) -> GridRecord:
    """Compose one record: draw K sources (repeats allowed), fill the grid,
    paste in a random order capturing each partial canvas."""
    if not sources:
        raise ValueError("empty source corpus")
    k = rows * cols
    picks = rng.integers(0, len(sources), k)
    channels = sources[0].pixels.shape[2]
    layout = GridLayout(rows, cols, tuple((i, i // cols, i % cols) for i in range(k)))
    labels = {i: sources[picks[i]].label for i in range(k)}
    names = {i: label_names[labels[i]] for i in range(k)} if label_names else None
    graph = graph_from_layout(layout, labels, names)

    order = tuple(int(i) for i in rng.permutation(k))
    canvas = np.zeros((rows * cell, cols * cell, channels))
    intermediates = []
    for step, node in enumerate(order):
        r, c = node // cols, node % cols
        patch = resize_cell(sources[picks[node]].pixels, cell)
        canvas[r * cell : (r + 1) * cell, c * cell : (c + 1) * cell] = patch
        if step < k - 1:
            intermediates.append(canvas.copy())
    return GridRecord(graph, layout, order, canvas, intermediates, seed=-1)


def write_record(record_dir, record: GridRecord) -> None:
    record_dir = Path(record_dir)
    record_dir.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if record.final.shape[2] == 1 else "ppm"
    (record_dir / "graph.json").write_text(serialize_scene_graph(record.graph) + "\n")
    write_image(record_dir / f"final.{ext}", record.final)
    for i, img in enumerate(record.intermediates, start=1):
        write_image(record_dir / f"step_{i}.{ext}", img)
    meta = {
        "rows": record.layout.rows,
        "cols": record.layout.cols,
        "placement_order": list(record.placement_order),
        "seed": record.seed,
        "cells": [list(c) for c in record.layout.cells],
    }
    (record_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_record_dir(record_dir) -> GridRecord:
    record_dir = Path(record_dir)
    meta = json.loads((record_dir / "meta.json").read_text())
    graph = parse_scene_graph((record_dir / "graph.json").read_text())
    layout = GridLayout(meta["rows"], meta["cols"], tuple(tuple(c) for c in meta["cells"]))
    ext = "pgm" if list(record_dir.glob("final.*"))[0].suffix == ".pgm" else "ppm"
    final = read_image(record_dir / f"final.{ext}")
    steps = meta["rows"] * meta["cols"]
    intermediates = [read_image(record_dir / f"step_{i}.{ext}") for i in range(1, steps)]
    return GridRecord(
        graph, layout, tuple(meta["placement_order"]), final, intermediates, meta["seed"]
    )


def split_counts(count: int) -> dict[str, int]:
    if count < 10:
        raise ValueError(f"need at least 10 records to populate all splits, got {count}")
    n_train = int(count * 0.7)
    n_val = int(count * 0.1)
    return {"train": n_train, "val": n_val, "test": count - n_train - n_val}


def build_grid_dataset(
    sources: list[SourceImage],
    rows: int,
    cols: int,
    count: int,
    seed: int,
    out_dir,
    source_name: str = "custom",
    cell: int = 16,
    label_names=None,
) -> dict:
    """Write `count` records plus manifest.json under `out_dir`; returns the
    manifest.  Record i uses its own RNG seeded with seed + i, so any record
    can be regenerated independently."""
    out_dir = Path(out_dir)
    counts = split_counts(count)
    channels = sources[0].pixels.shape[2] if sources else 0
    splits: dict[str, list[str]] = {s: [] for s in SPLITS}
    index = 0
    for split in SPLITS:
        for local in range(counts[split]):
            rng = np.random.default_rng(seed + index)
            record = synthesize_record(sources, rows, cols, rng, cell, label_names)
            record.seed = seed + index
            rel = f"{split}/{local}"
            write_record(out_dir / rel, record)
            splits[split].append(rel)
            index += 1
    manifest = {
        "source": source_name,
        "rows": rows,
        "cols": cols,
        "cell": cell,
        "channels": channels,
        "count": count,
        "seed": seed,
        "num_labels": 10,
        "label_names": list(label_names) if label_names else None,
        "splits": {s: {"count": counts[s], "records": splits[s]} for s in SPLITS},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise ValueError(f"no manifest.json under {dataset_dir}")
    return json.loads(path.read_text())


def read_record(dataset_dir, manifest: dict, index: int) -> GridRecord:
    """Record by global index, ordered train then val then test."""
    offset = index
    for split in SPLITS:
        records = manifest["splits"][split]["records"]
        if offset < len(records):
            return read_record_dir(Path(dataset_dir) / records[offset])
        offset -= len(records)
    raise ValueError(f"record index {index} out of range 0..{manifest['count'] - 1}")


def load_split(dataset_dir, manifest: dict, split: str) -> list[GridRecord]:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    base = Path(dataset_dir)
    return [read_record_dir(base / rel) for rel in manifest["splits"][split]["records"]]
