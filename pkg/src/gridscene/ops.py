"""Differentiable primitives over `Tensor`.

Each primitive validates shapes, computes its forward value eagerly with
numpy, rejects non-finite outputs, and, when a tape is active and an input
carries requires_grad, records a pullback closure mapping the output
gradient to per-input gradients.  `PRIMITIVES` is the registry used by
`apply_primitive` and by the finite-difference harness in `gradcheck`.

Conventions: image tensors are NCHW; convolution kernels are (A, B, kh, kw)
where conv2d maps B input channels to A output channels and conv_transpose2d
maps A to B, making conv_transpose2d the exact linear adjoint of conv2d for
the same kernel.  conv2d requires (H + 2*pad - kh) to divide the stride so
the adjoint pairing is exact; every kernel in this package satisfies that.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ContractError, NumericError, ShapeError, Tensor, active_tape


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(kind, inputs, out_data, pullback) -> Tensor:
    if not np.isfinite(out_data).all():
        raise NumericError(f"{kind}: non-finite values in output")
    needs = any(t.requires_grad for t in inputs)
    result = Tensor(out_data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(kind, tuple(inputs), result, pullback)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not broadcastable")

    def pullback(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), out, pullback)


def scale(x, factor: float) -> Tensor:
    x = _as_tensor(x)
    factor = float(factor)
    if not math.isfinite(factor):
        raise ContractError(f"scale: factor must be finite, got {factor}")
    out = x.data * factor

    def pullback(g):
        return (g * factor,)

    return _emit("scale", (x,), out, pullback)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)

    def pullback(g):
        return (g * (x.data > 0),)

    return _emit("relu", (x,), out, pullback)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def pullback(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", (x,), out, pullback)


def softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Normalized exponentials along `axis`.

    `mask` is an optional boolean array broadcastable to x; True entries are
    excluded from the normalization and receive weight exactly 0.0 in the
    output.  A slice with every entry masked has no valid normalization and
    raises a contract error.
    """
    x = _as_tensor(x)
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if mask.all(axis=axis).any():
            raise ContractError("softmax: a slice is fully masked")
        xs = np.where(mask, -np.inf, xd)
        m = xs.max(axis=axis, keepdims=True)
        e = np.exp(xs - m)
    else:
        m = xd.max(axis=axis, keepdims=True)
        e = np.exp(xd - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def pullback(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _emit("softmax", (x,), out, pullback)


def layer_norm(x, gain, bias, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if x.ndim < 1 or d == 0:
        raise ShapeError(f"layer_norm: input shape {x.shape} has no feature axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} do not match feature width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def pullback(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        ggain = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        gbias = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
        return gx, ggain, gbias

    return _emit("layer_norm", (x, gain, bias), out, pullback)


def mse(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    out = np.asarray((diff * diff).mean(), dtype=a.dtype)

    def pullback(g):
        d = g * (2.0 / diff.size) * diff
        return d, -d

    return _emit("mse", (a, b), out, pullback)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}")

    def pullback(g):
        return (g.reshape(x.shape),)

    return _emit("reshape", (x,), out, pullback)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} are not a permutation for ndim {x.ndim}")
    out = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def pullback(g):
        return (g.transpose(inverse),)

    return _emit("transpose", (x,), out, pullback)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat: needs at least one input")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[p.shape for p in parts]} do not align on axis {axis}"
        )
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def pullback(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(parts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _emit("concat", tuple(parts), out, pullback)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product for 2-D or batched 3-D operands.

    A 2-D operand paired with a 3-D one broadcasts over the batch axis; the
    corresponding gradient is summed back over that axis.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3):
        raise ShapeError(f"matmul: ndim {a.ndim} @ {b.ndim} unsupported (need 2 or 3)")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def pullback(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _emit("matmul", (a, b), out, pullback)


def embedding(table, ids) -> Tensor:
    """Row lookup into a 2-D table; `ids` is a constant integer array."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding: ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: id out of range [0, {table.shape[0]}), got {ids.min()}..{ids.max()}"
        )
    out = table.data[ids]

    def pullback(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _emit("embedding", (table,), out, pullback)


# ---------------------------------------------------------------------------
# convolution family

_interp_cache: dict[tuple[int, int], np.ndarray] = {}


def _conv_out_sizes(kind, h, w, kh, kw, stride, pad):
    eh, ew = h + 2 * pad - kh, w + 2 * pad - kw
    if eh < 0 or ew < 0:
        raise ShapeError(f"{kind}: kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    if eh % stride or ew % stride:
        raise ShapeError(
            f"{kind}: size {h}x{w} with kernel {kh}x{kw}, stride {stride}, pad {pad} "
            "does not tile exactly; (size + 2*pad - kernel) must divide the stride"
        )
    return eh // stride + 1, ew // stride + 1


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, (n, c, ho, wo)


def _col2im(cols6, x_shape, stride, pad):
    n, c, h, w = x_shape
    _, _, ho, wo, kh, kw = cols6.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols6.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols6[
                :, :, :, :, i, j
            ]
    return out[:, :, pad : pad + h, pad : pad + w] if pad else out


def _conv_fwd(x, k, stride, pad):
    co, ci, kh, kw = k.shape
    cols, (n, c, ho, wo) = _im2col(x, kh, kw, stride, pad)
    y = cols @ k.reshape(co, -1).T
    return y.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)


def _conv_x_grad(gy, k, stride, pad, x_shape):
    co, ci, kh, kw = k.shape
    n, c, h, w = x_shape
    ho, wo = gy.shape[2], gy.shape[3]
    g = gy.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
    gcols = g @ k.reshape(co, -1)
    gcols6 = gcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    return _col2im(gcols6, x_shape, stride, pad)


def _conv_k_grad(x, gy, k_shape, stride, pad):
    co, ci, kh, kw = k_shape
    cols, (n, c, ho, wo) = _im2col(x, kh, kw, stride, pad)
    g = gy.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
    return (g.T @ cols).reshape(co, ci, kh, kw)


def conv2d(x, k, stride: int = 1, pad: int = 0) -> Tensor:
    x, k = _as_tensor(x), _as_tensor(k)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d: need NCHW input and 4-D kernel, got {x.shape} and {k.shape}")
    co, ci, kh, kw = k.shape
    if x.shape[1] != ci:
        raise ShapeError(f"conv2d: input channels {x.shape[1]} != kernel channels {ci}")
    _conv_out_sizes("conv2d", x.shape[2], x.shape[3], kh, kw, stride, pad)
    out = _conv_fwd(x.data, k.data, stride, pad)

    def pullback(g):
        gx = _conv_x_grad(g, k.data, stride, pad, x.shape) if x.requires_grad else None
        gk = _conv_k_grad(x.data, g, k.shape, stride, pad) if k.requires_grad else None
        return gx, gk

    return _emit("conv2d", (x, k), out, pullback)


def conv_transpose2d(x, k, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d with the same kernel: maps A -> B channels."""
    x, k = _as_tensor(x), _as_tensor(k)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d: need NCHW input and 4-D kernel, got {x.shape} and {k.shape}"
        )
    co, ci, kh, kw = k.shape
    if x.shape[1] != co:
        raise ShapeError(f"conv_transpose2d: input channels {x.shape[1]} != kernel channels {co}")
    n, _, h, w = x.shape
    h_out = (h - 1) * stride - 2 * pad + kh
    w_out = (w - 1) * stride - 2 * pad + kw
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv_transpose2d: output size {h_out}x{w_out} is empty")
    out = _conv_x_grad(x.data, k.data, stride, pad, (n, ci, h_out, w_out))

    def pullback(g):
        gx = _conv_fwd(g, k.data, stride, pad) if x.requires_grad else None
        gk = _conv_k_grad(g, x.data, k.shape, stride, pad) if k.requires_grad else None
        return gx, gk

    return _emit("conv_transpose2d", (x, k), out, pullback)


def _interp_matrix(size: int, factor: int) -> np.ndarray:
    """Row-stochastic 1-D bilinear interpolation matrix (size*factor, size)."""
    key = (size, factor)
    cached = _interp_cache.get(key)
    if cached is not None:
        return cached
    out_size = size * factor
    src = np.clip((np.arange(out_size) + 0.5) / factor - 0.5, 0, size - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, size - 1)
    frac = src - i0
    mat = np.zeros((out_size, size))
    np.add.at(mat, (np.arange(out_size), i0), 1.0 - frac)
    np.add.at(mat, (np.arange(out_size), i1), frac)
    _interp_cache[key] = mat
    return mat


def upsample_bilinear2d(x, factor: int = 2) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear2d: need NCHW input, got {x.shape}")
    if factor < 1:
        raise ShapeError(f"upsample_bilinear2d: factor must be >= 1, got {factor}")
    lh = _interp_matrix(x.shape[2], factor).astype(x.dtype)
    lw = _interp_matrix(x.shape[3], factor).astype(x.dtype)
    out = np.einsum("ph,qw,nchw->ncpq", lh, lw, x.data, optimize=True)

    def pullback(g):
        return (np.einsum("ph,qw,ncpq->nchw", lh, lw, g, optimize=True),)

    return _emit("upsample_bilinear2d", (x,), out, pullback)


def avg_pool2d(x, window) -> Tensor:
    """Non-overlapping mean pooling; window must tile the input exactly."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d: need NCHW input, got {x.shape}")
    wh, ww = (window, window) if isinstance(window, int) else window
    n, c, h, w = x.shape
    if wh < 1 or ww < 1 or h % wh or w % ww:
        raise ShapeError(f"avg_pool2d: window {wh}x{ww} does not tile input {h}x{w}")
    ho, wo = h // wh, w // ww
    out = x.data.reshape(n, c, ho, wh, wo, ww).mean(axis=(3, 5))

    def pullback(g):
        expanded = np.broadcast_to(
            g[:, :, :, None, :, None] / (wh * ww), (n, c, ho, wh, wo, ww)
        )
        return (expanded.reshape(n, c, h, w),)

    return _emit("avg_pool2d", (x,), out, pullback)


# ---------------------------------------------------------------------------
# registry

PRIMITIVES = {
    "add": add,
    "scale": scale,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "mse": mse,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "matmul": matmul,
    "embedding": embedding,
    "conv2d": conv2d,
    "conv_transpose2d": conv_transpose2d,
    "upsample_bilinear2d": upsample_bilinear2d,
    "avg_pool2d": avg_pool2d,
}


def apply_primitive(kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Dispatch a registered primitive by name."""
    fn = PRIMITIVES.get(kind)
    if fn is None:
        raise ContractError(f"unknown primitive {kind!r}; known: {sorted(PRIMITIVES)}")
    if kind == "concat":
        return fn(inputs, **(attrs or {}))
    return fn(*inputs, **(attrs or {}))
