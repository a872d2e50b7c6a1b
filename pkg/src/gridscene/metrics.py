"""Image and distribution metrics, plus the semantic satisfaction rate.

Images are (H, W, C) float arrays in [0, 1].  SSIM uses the classic 11x11
Gaussian window (sigma 1.5) over valid positions only; MS-SSIM uses three
scales with the standard weight triple renormalized to sum to one, shrinking
the window where a coarse scale is smaller than it.  FID fits Gaussians to
feature rows and takes the matrix square root through a symmetric
eigendecomposition, clamping the tiny negative eigenvalues that roundoff
produces.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .scenegraph import GridLayout, SceneGraph, satisfies
from .tensor import ContractError, NumericError, ShapeError

_K1, _K2 = 0.01, 0.03
_MS_WEIGHTS = (0.0448, 0.2856, 0.3001)
_EIG_FLOOR = -1e-8
BLANK_MAX = 0.1


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ShapeError(f"expected (H, W, C) images, got {a.shape}")


def mse_metric(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def _gaussian(window: int, sigma: float) -> np.ndarray:
    offsets = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(offsets**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2-d array with window g."""
    w = g.size
    v = sliding_window_view(x, w, axis=0) @ g
    return sliding_window_view(v, w, axis=1) @ g


def _ssim_terms(a: np.ndarray, b: np.ndarray, window: int, sigma: float):
    """Mean luminance term product and mean contrast-structure term."""
    c1, c2 = _K1**2, _K2**2
    g = _gaussian(window, sigma)
    full_total, cs_total = 0.0, 0.0
    channels = a.shape[2]
    for c in range(channels):
        x, y = a[:, :, c], b[:, :, c]
        mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
        var_x = _filter_valid(x * x, g) - mu_x**2
        var_y = _filter_valid(y * y, g) - mu_y**2
        cov = _filter_valid(x * y, g) - mu_x * mu_y
        cs_map = (2 * cov + c2) / (var_x + var_y + c2)
        full_map = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1) * cs_map
        full_total += float(np.mean(full_map))
        cs_total += float(np.mean(cs_map))
    return full_total / channels, cs_total / channels


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < window:
        raise ContractError(
            f"image {a.shape[0]}x{a.shape[1]} smaller than the {window}x{window} window"
        )
    full, _ = _ssim_terms(a, b, window, sigma)
    return full


def _downsample2(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def max_feasible_scales(height: int, width: int) -> int:
    side = min(height, width)
    scales = 1
    while side // 2 >= 4:
        side //= 2
        scales += 1
    return scales


def ms_ssim(
    a: np.ndarray, b: np.ndarray, scales: int = 3, window: int = 11, sigma: float = 1.5
) -> float:
    _check_pair(a, b)
    feasible = max_feasible_scales(a.shape[0], a.shape[1])
    if scales < 1 or scales > feasible:
        raise ContractError(
            f"{scales} scales infeasible for {a.shape[0]}x{a.shape[1]}; at most {feasible}"
        )
    if scales == 1:
        return ssim(a, b, window, sigma)
    weights = np.array(_MS_WEIGHTS[:scales])
    weights = weights / weights.sum()
    cur_a, cur_b = a, b
    score = 1.0
    for level in range(scales):
        side = min(cur_a.shape[0], cur_a.shape[1])
        win = min(window, side if side % 2 else side - 1)
        full, cs = _ssim_terms(cur_a, cur_b, win, sigma)
        # fractional powers need nonnegative bases; clamp roundoff negatives
        term = full if level == scales - 1 else cs
        score *= max(term, 0.0) ** weights[level]
        if level < scales - 1:
            cur_a, cur_b = _downsample2(cur_a), _downsample2(cur_b)
    return float(score)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    if vals.min() < _EIG_FLOOR * max(1.0, abs(vals).max()):
        raise NumericError(f"matrix substantially non-PSD: min eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature-row sets."""
    a, b = np.asarray(features_a, float), np.asarray(features_b, float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"expected (n, d) feature sets with equal d, got {a.shape}, {b.shape}")
    if len(a) < 2 or len(b) < 2:
        raise ContractError("fid needs at least 2 feature rows per set")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericError("non-finite feature values")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    # atleast_2d: np.cov collapses d=1 feature sets to a 0-d array
    cov_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    root_a = _psd_sqrt(cov_a)
    inner = _psd_sqrt(root_a @ cov_b @ root_a)
    delta = mu_a - mu_b
    value = float(delta @ delta + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(inner))
    return max(value, 0.0)


@dataclass
class SatisfactionResult:
    fraction: float
    matched: bool


def split_cells(image: np.ndarray, rows: int, cols: int) -> list[np.ndarray]:
    """Row-major list of (cell_h, cell_w, C) views."""
    if image.shape[0] % rows or image.shape[1] % cols:
        raise ShapeError(f"image {image.shape} not divisible into {rows}x{cols} cells")
    ch, cw = image.shape[0] // rows, image.shape[1] // cols
    return [
        image[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw]
        for r in range(rows)
        for c in range(cols)
    ]


def constraint_satisfaction(
    image: np.ndarray, graph: SceneGraph, classifier, rows: int, cols: int
) -> SatisfactionResult:
    """Fraction of graph edges that hold in the image under the classifier.

    Cells whose max intensity is below BLANK_MAX count as empty.  Nodes are
    matched injectively to cells carrying their predicted label; among the
    complete matchings the best satisfied fraction is reported.  If no
    complete matching exists the result is 0 with matched=False.
    """
    cells = split_cells(image, rows, cols)
    filled = [i for i, cell in enumerate(cells) if cell.max() >= BLANK_MAX]
    predicted = {i: classifier.predict(cells[i]) for i in filled}

    wanted = [label for _, label in graph.nodes]
    candidates = [[i for i in filled if predicted[i] == label] for label in wanted]
    if graph.node_count > len(filled) or any(not c for c in candidates):
        return SatisfactionResult(0.0, False)

    best = None
    for assign in permutations(filled, graph.node_count):
        if any(predicted[cell] != label for cell, label in zip(assign, wanted)):
            continue
        layout = GridLayout(
            rows,
            cols,
            tuple(
                (nid, cell // cols, cell % cols)
                for (nid, _), cell in zip(graph.nodes, assign)
            ),
        )
        _, violated = satisfies(layout, graph)
        fraction = 1.0 if not graph.edges else 1.0 - len(violated) / len(graph.edges)
        if best is None or fraction > best:
            best = fraction
        if best == 1.0:
            break
    if best is None:
        return SatisfactionResult(0.0, False)
    return SatisfactionResult(best, True)


@dataclass
class MetricReport:
    """Per-record metric rows plus dataset-level aggregates."""

    per_record: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"aggregate": self.aggregate, "per_record": self.per_record, "config": self.config},
            indent=1,
            sort_keys=True,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.per_record:
            return ""
        names = sorted(self.per_record[0])
        writer = csv.DictWriter(buf, fieldnames=names)
        writer.writeheader()
        for row in self.per_record:
            writer.writerow(row)
        return buf.getvalue()

    def table(self) -> str:
        columns = ["mse", "ssim", "ms_ssim", "fid"]
        header = " | ".join(f"{c.upper().replace('_', '-'):>8}" for c in columns)
        cells = " | ".join(
            f"{self.aggregate[c]:8.4f}" if c in self.aggregate else " " * 8 for c in columns
        )
        return header + "\n" + cells


def build_report(pairs, config=None, classifier=None, graphs=None, rows=0, cols=0) -> MetricReport:
    """Metric rows for (generated, truth) image pairs; fid is added separately.

    graphs, when given alongside a classifier, must align with pairs.
    """
    report = MetricReport(config=dict(config or {}))
    feasible = None
    for idx, (gen, truth) in enumerate(pairs):
        feasible = max_feasible_scales(gen.shape[0], gen.shape[1]) if feasible is None else feasible
        row = {
            "index": idx,
            "mse": mse_metric(gen, truth),
            "ssim": ssim(gen, truth),
            "ms_ssim": ms_ssim(gen, truth, scales=min(3, feasible)),
        }
        if classifier is not None and graphs is not None:
            sat = constraint_satisfaction(gen, graphs[idx], classifier, rows, cols)
            row["constraint_satisfaction"] = sat.fraction
            row["matched"] = sat.matched
        report.per_record.append(row)
    if report.per_record:
        for name in report.per_record[0]:
            if name in ("index", "matched"):
                continue
            report.aggregate[name] = float(np.mean([r[name] for r in report.per_record]))
    return report
