"""Source image corpora.

Loaders for the two on-disk formats the dataset builder consumes: MNIST-style
IDX files (big-endian magic 0x803/0x801) and CIFAR-10 binary batches
(3073-byte records, channel-planar).  Both return lists of SourceImage with
float pixels in [0, 1].

Because these corpora may not be present (and fetching them is out of
scope), `synthesize_mnist_style` and `synthesize_cifar_style` write
deterministic stand-in corpora in the exact same binary formats: rendered
digit glyphs for the gray corpus, color-coded glyphs for the color one.
Loaders cannot tell them apart from the real thing, and real files drop in
unchanged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MNIST_LABEL_NAMES = tuple(str(d) for d in range(10))
CIFAR_LABEL_NAMES = (
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
)


@dataclass(frozen=True)
class SourceImage:
    pixels: np.ndarray  # (H, W, C) float64 in [0, 1]
    label: int


def load_mnist_idx(images_path, labels_path) -> list[SourceImage]:
    with open(images_path, "rb") as f:
        img_data = f.read()
    if len(img_data) < 16:
        raise ValueError(f"{images_path}: truncated IDX header")
    magic, n, h, w = struct.unpack(">IIII", img_data[:16])
    if magic != 0x00000803:
        raise ValueError(f"{images_path}: bad IDX image magic 0x{magic:08x}")
    if len(img_data) != 16 + n * h * w:
        raise ValueError(f"{images_path}: expected {16 + n * h * w} bytes, got {len(img_data)}")
    pixels = np.frombuffer(img_data, np.uint8, offset=16).reshape(n, h, w)

    with open(labels_path, "rb") as f:
        lab_data = f.read()
    if len(lab_data) < 8:
        raise ValueError(f"{labels_path}: truncated IDX header")
    magic, n_labels = struct.unpack(">II", lab_data[:8])
    if magic != 0x00000801:
        raise ValueError(f"{labels_path}: bad IDX label magic 0x{magic:08x}")
    if n_labels != n:
        raise ValueError(f"label count {n_labels} != image count {n}")
    if len(lab_data) != 8 + n:
        raise ValueError(f"{labels_path}: expected {8 + n} bytes, got {len(lab_data)}")
    labels = np.frombuffer(lab_data, np.uint8, offset=8)

    return [
        SourceImage(pixels[i, :, :, None].astype(np.float64) / 255.0, int(labels[i]))
        for i in range(n)
    ]


def load_cifar10(batch_paths) -> list[SourceImage]:
    record_size = 3073  # 1 label byte + 3 * 32 * 32 channel-planar pixels
    out = []
    for path in batch_paths:
        with open(path, "rb") as f:
            data = f.read()
        if not data or len(data) % record_size:
            raise ValueError(f"{path}: size {len(data)} is not a multiple of {record_size}")
        raw = np.frombuffer(data, np.uint8).reshape(-1, record_size)
        labels = raw[:, 0]
        if labels.max() > 9:
            raise ValueError(f"{path}: label {labels.max()} out of range 0..9")
        pixels = raw[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        for i in range(raw.shape[0]):
            out.append(SourceImage(pixels[i].astype(np.float64) / 255.0, int(labels[i])))
    return out


# ---------------------------------------------------------------------------
# area-average resizing

_area_cache: dict[tuple[int, int], np.ndarray] = {}


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix averaging input pixels into output pixels by
    exact fractional overlap; handles non-integer ratios like 28 -> 16."""
    key = (n_in, n_out)
    cached = _area_cache.get(key)
    if cached is not None:
        return cached
    scale = n_in / n_out
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        start, end = i * scale, (i + 1) * scale
        for j in range(int(np.floor(start)), min(int(np.ceil(end)), n_in)):
            mat[i, j] = (min(end, j + 1) - max(start, j)) / scale
    _area_cache[key] = mat
    return mat


def resize_cell(img: np.ndarray, size: int = 16) -> np.ndarray:
    """Area-average an (H, W, C) image down to (size, size, C)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"expected (H, W, C) image, got shape {img.shape}")
    h, w, _ = img.shape
    if h < size or w < size:
        raise ValueError(f"cannot area-average {h}x{w} up to {size}x{size}")
    rh = _area_matrix(h, size)
    rw = _area_matrix(w, size)
    return np.einsum("ph,qw,hwc->pqc", rh, rw, img, optimize=True)


# ---------------------------------------------------------------------------
# synthetic stand-in corpora

_DIGIT_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00010 00100 01000 11111",
    "11111 00010 00100 00010 00001 10001 01110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]

_GLYPH_PALETTE = (
    (0.95, 0.25, 0.2),
    (0.2, 0.85, 0.3),
    (0.25, 0.4, 0.95),
    (0.9, 0.85, 0.2),
    (0.85, 0.3, 0.85),
    (0.2, 0.85, 0.85),
    (0.95, 0.55, 0.15),
    (0.55, 0.25, 0.9),
    (0.4, 0.65, 0.45),
    (0.9, 0.9, 0.9),
)


def _glyph(digit: int) -> np.ndarray:
    rows = _DIGIT_GLYPHS[digit].split()
    return np.array([[float(ch) for ch in row] for row in rows])


def _soften(img: np.ndarray) -> np.ndarray:
    """One pass of a separable [1 2 1]/4 blur along both image axes."""
    k = np.array([0.25, 0.5, 0.25])
    out = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 0, img)
    return np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 1, out)


def _balanced_labels(count: int, rng) -> np.ndarray:
    labels = np.arange(count) % 10
    rng.shuffle(labels)
    return labels


def _render_digit(digit: int, size: int, rng) -> np.ndarray:
    glyph = np.kron(_glyph(digit), np.ones((3, 3)))  # 21 x 15
    gh, gw = glyph.shape
    canvas = np.zeros((size, size))
    y0 = int(rng.integers(1, size - gh))
    x0 = int(rng.integers(1, size - gw))
    canvas[y0 : y0 + gh, x0 : x0 + gw] = glyph * rng.uniform(0.75, 1.0)
    canvas = _soften(canvas)
    canvas += rng.uniform(0.0, 0.05, canvas.shape)
    return np.clip(canvas, 0.0, 1.0)


def synthesize_mnist_style(count: int, seed: int, images_path, labels_path) -> None:
    """Write a deterministic IDX image/label pair of rendered digit glyphs."""
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(count, rng)
    pixels = np.empty((count, 28, 28), dtype=np.uint8)
    for i in range(count):
        img = _render_digit(int(labels[i]), 28, rng)
        pixels[i] = np.round(img * 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, count, 28, 28))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, count))
        f.write(labels.astype(np.uint8).tobytes())


def synthesize_cifar_style(count: int, seed: int, path) -> None:
    """Write a deterministic CIFAR-10 binary batch of color-coded glyphs."""
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(count, rng)
    with open(path, "wb") as f:
        for i in range(count):
            label = int(labels[i])
            shape = _render_digit(label, 32, rng)
            base = np.array(_GLYPH_PALETTE[label])
            tint = np.clip(base + rng.uniform(-0.08, 0.08, 3), 0.0, 1.0)
            img = shape[:, :, None] * tint[None, None, :]
            img += rng.uniform(0.0, 0.04, img.shape)
            img = np.clip(img, 0.0, 1.0)
            planar = np.round(img * 255).astype(np.uint8).transpose(2, 0, 1)
            f.write(bytes([label]) + planar.tobytes())
