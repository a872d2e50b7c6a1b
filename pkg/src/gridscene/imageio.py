"""Binary PGM (P5) and PPM (P6) image persistence, maxval 255.

Images travel through the package as (H, W, C) float arrays in [0, 1] with
C = 1 (gray, PGM) or C = 3 (color, PPM).  Writing quantizes with
round(x * 255); reading maps back through /255, so a write/read round trip
is exact at 8-bit resolution.
"""

from __future__ import annotations

import numpy as np


def quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {img.shape}")
    h, w, c = img.shape
    magic = b"P5" if c == 1 else b"P6"
    raw = quantize(img)
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(raw.tobytes())


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace/comment-delimited header tokens and the
    offset of the byte right after the single whitespace ending the last one."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated image header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte after maxval


def read_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens, offset = _tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported image magic {magic!r} (need binary P5 or P6)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval} (need 255)")
    c = 1 if magic == b"P5" else 3
    expected = h * w * c
    raw = np.frombuffer(data, np.uint8, count=-1, offset=offset)
    if raw.size != expected:
        raise ValueError(f"pixel payload has {raw.size} bytes, expected {expected}")
    return raw.reshape(h, w, c).astype(np.float64) / 255.0
