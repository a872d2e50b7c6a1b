"""Parameter-bearing building blocks shared across the learned modules."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def xavier(rng, d_in: int, d_out: int, dtype) -> Tensor:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return Tensor(rng.uniform(-limit, limit, (d_in, d_out)), True, dtype)


class Affine:
    """y = x W + b"""

    def __init__(self, d_in, d_out, rng, dtype):
        self.w = xavier(rng, d_in, d_out, dtype)
        self.b = Tensor(np.zeros(d_out), True, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, self.w), self.b)

    def named(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNormAffine:
    def __init__(self, width, dtype):
        self.gain = Tensor(np.ones(width), True, dtype)
        self.bias = Tensor(np.zeros(width), True, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)

    def named(self, prefix):
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class Conv:
    """Convolution with a per-channel bias; transposed flips the mapping."""

    def __init__(self, c_in, c_out, k, stride, pad, rng, dtype, transposed=False):
        # every conv here feeds a relu; fan-in (He) scaling keeps activations
        # from decaying through the deep stacks the way the xavier limit does
        limit = np.sqrt(6.0 / (c_in * k * k))
        shape = (c_in, c_out, k, k) if transposed else (c_out, c_in, k, k)
        self.w = Tensor(rng.uniform(-limit, limit, shape), True, dtype)
        self.b = Tensor(np.zeros((c_out, 1, 1)), True, dtype)
        self.stride = stride
        self.pad = pad
        self.transposed = transposed

    def __call__(self, x: Tensor) -> Tensor:
        if self.transposed:
            y = ops.conv_transpose2d(x, self.w, self.stride, self.pad)
        else:
            y = ops.conv2d(x, self.w, self.stride, self.pad)
        return ops.add(y, self.b)

    def named(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}
