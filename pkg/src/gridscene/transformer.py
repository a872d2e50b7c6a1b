"""Encoder-decoder transformer over feature tokens.

Post-norm residual blocks throughout: LayerNorm(x + Sublayer(x)).  The
encoder projects graph-node features to d_model and adds sinusoidal
positional encoding; the decoder consumes d_model-sized feature tokens
directly (no input projection, no positional encoding: the first token may
be the encoding of an arbitrary partial rendering, which must look the same
at sequence position 0 as it did mid-sequence during training).

Causal masking goes through the masked softmax primitive, which writes
exact zeros for blocked positions, so outputs at position i carry no trace
of later inputs.  `generate` exploits that: each step runs the decoder at
the full padded length, keeping every BLAS call's shape fixed so stepwise
and teacher-forced decoding are bitwise identical.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .layers import Affine, LayerNormAffine, xavier
from .tensor import ContractError, Tensor


def positional_encoding(length: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos of the same."""
    if d_model % 2:
        raise ContractError(f"positional encoding needs even width, got {d_model}")
    pos = np.arange(length)[:, None]
    rates = 1.0 / np.power(10000.0, np.arange(0, d_model, 2) / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates)
    return pe.astype(dtype)


def causal_mask(length: int) -> np.ndarray:
    """True above the diagonal: position i may attend to j <= i only."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def _swap_last(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return ops.transpose(t, axes)


def scaled_dot_attention(q, k, v, mask=None) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v with optional boolean blocking mask."""
    d_k = q.shape[-1]
    scores = ops.scale(ops.matmul(q, _swap_last(k)), 1.0 / np.sqrt(d_k))
    weights = ops.softmax(scores, axis=-1, mask=mask)
    return ops.matmul(weights, v)


class MultiHeadAttention:
    """Concatenated-head attention; projections carry no bias.

    The (d_model, d_model) projection matrices are the per-head d_model x
    d_k blocks laid side by side; `heads=1` reduces to plain
    scaled_dot_attention around the projections.
    """

    def __init__(self, d_model, heads, rng, dtype):
        if d_model % heads:
            raise ContractError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        self.wq = xavier(rng, d_model, d_model, dtype)
        self.wk = xavier(rng, d_model, d_model, dtype)
        self.wv = xavier(rng, d_model, d_model, dtype)
        self.wo = xavier(rng, d_model, d_model, dtype)

    def _split(self, x: Tensor, batch: int, length: int) -> Tensor:
        x = ops.reshape(x, (batch, length, self.heads, self.d_k))
        x = ops.transpose(x, (0, 2, 1, 3))
        return ops.reshape(x, (batch * self.heads, length, self.d_k))

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask=None) -> Tensor:
        b, n, _ = x_q.shape
        m = x_kv.shape[1]
        q = self._split(ops.matmul(x_q, self.wq), b, n)
        k = self._split(ops.matmul(x_kv, self.wk), b, m)
        v = self._split(ops.matmul(x_kv, self.wv), b, m)
        att = scaled_dot_attention(q, k, v, mask)
        att = ops.reshape(att, (b, self.heads, n, self.d_k))
        att = ops.transpose(att, (0, 2, 1, 3))
        att = ops.reshape(att, (b, n, self.d_model))
        return ops.matmul(att, self.wo)

    def named(self, prefix):
        return {
            f"{prefix}.wq": self.wq,
            f"{prefix}.wk": self.wk,
            f"{prefix}.wv": self.wv,
            f"{prefix}.wo": self.wo,
        }


class _FeedForward:
    def __init__(self, d_model, width, rng, dtype):
        self.inner = Affine(d_model, width, rng, dtype)
        self.outer = Affine(width, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(ops.relu(self.inner(x)))

    def named(self, prefix):
        return {**self.inner.named(f"{prefix}.inner"), **self.outer.named(f"{prefix}.outer")}


class EncoderLayer:
    def __init__(self, d_model, heads, ffn_width, rng, dtype):
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ffn = _FeedForward(d_model, ffn_width, rng, dtype)
        self.ln1 = LayerNormAffine(d_model, dtype)
        self.ln2 = LayerNormAffine(d_model, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.ln1(ops.add(x, self.attn(x, x)))
        return self.ln2(ops.add(x, self.ffn(x)))

    def named(self, prefix):
        return {
            **self.attn.named(f"{prefix}.attn"),
            **self.ffn.named(f"{prefix}.ffn"),
            **self.ln1.named(f"{prefix}.ln1"),
            **self.ln2.named(f"{prefix}.ln2"),
        }


class DecoderLayer:
    def __init__(self, d_model, heads, ffn_width, rng, dtype):
        self.self_attn = MultiHeadAttention(d_model, heads, rng, dtype)
        self.cross_attn = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ffn = _FeedForward(d_model, ffn_width, rng, dtype)
        self.ln1 = LayerNormAffine(d_model, dtype)
        self.ln2 = LayerNormAffine(d_model, dtype)
        self.ln3 = LayerNormAffine(d_model, dtype)

    def __call__(self, x: Tensor, memory: Tensor, mask) -> Tensor:
        x = self.ln1(ops.add(x, self.self_attn(x, x, mask)))
        x = self.ln2(ops.add(x, self.cross_attn(x, memory)))
        return self.ln3(ops.add(x, self.ffn(x)))

    def named(self, prefix):
        return {
            **self.self_attn.named(f"{prefix}.self_attn"),
            **self.cross_attn.named(f"{prefix}.cross_attn"),
            **self.ffn.named(f"{prefix}.ffn"),
            **self.ln1.named(f"{prefix}.ln1"),
            **self.ln2.named(f"{prefix}.ln2"),
            **self.ln3.named(f"{prefix}.ln3"),
        }


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return ops.reshape(x, (1, *x.shape)), True
    if x.ndim == 3:
        return x, False
    raise ContractError(f"expected (n, d) or (batch, n, d), got {x.shape}")


class Encoder:
    """Projects node features to d_model, adds positional encoding over the
    node sequence, then runs the self-attention stack."""

    def __init__(self, in_width, d_model, heads, ffn_width, layers, rng, dtype):
        self.d_model = d_model
        self.dtype = dtype
        self.proj = Affine(in_width, d_model, rng, dtype)
        self.layers = [
            EncoderLayer(d_model, heads, ffn_width, rng, dtype) for _ in range(layers)
        ]

    def __call__(self, node_feats: Tensor) -> Tensor:
        x, squeeze = _as_batched(node_feats)
        n = x.shape[1]
        if n == 0:
            raise ContractError("encoder needs at least one node")
        x = ops.add(self.proj(x), Tensor(positional_encoding(n, self.d_model, self.dtype)))
        for layer in self.layers:
            x = layer(x)
        return ops.reshape(x, x.shape[1:]) if squeeze else x

    def named(self, prefix="enc"):
        out = self.proj.named(f"{prefix}.proj")
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"{prefix}.layer{i}"))
        return out


class Decoder:
    """Causally masked self-attention plus cross-attention over the encoder
    memory; consumes and produces d_model feature tokens."""

    def __init__(self, d_model, heads, ffn_width, layers, rng, dtype):
        self.d_model = d_model
        self.layers = [
            DecoderLayer(d_model, heads, ffn_width, rng, dtype) for _ in range(layers)
        ]

    def __call__(self, tokens: Tensor, memory: Tensor) -> Tensor:
        x, squeeze = _as_batched(tokens)
        memory, _ = _as_batched(memory)
        if x.shape[0] != memory.shape[0]:
            raise ContractError(
                f"token batch {x.shape[0]} != memory batch {memory.shape[0]}"
            )
        mask = causal_mask(x.shape[1])
        for layer in self.layers:
            x = layer(x, memory, mask)
        return ops.reshape(x, x.shape[1:]) if squeeze else x

    def named(self, prefix="dec"):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"{prefix}.layer{i}"))
        return out


def generate(decoder: Decoder, memory: Tensor, sos: np.ndarray, steps: int) -> np.ndarray:
    """Autoregressive rollout of `steps` feature tokens from an SOS feature.

    Every step runs the decoder over a buffer padded to the full length;
    the causal mask guarantees the zero padding beyond the current prefix
    cannot influence earlier positions, and the fixed shapes keep each
    step's arithmetic bitwise identical to one teacher-forced pass over the
    final sequence.
    """
    if steps < 1:
        raise ContractError(f"generate needs steps >= 1, got {steps}")
    memory, _ = _as_batched(memory)
    sos = np.asarray(sos)
    if sos.ndim == 1:
        sos = sos[None, :]
    batch = memory.shape[0]
    if sos.shape != (batch, decoder.d_model):
        raise ContractError(f"sos shape {sos.shape} != ({batch}, {decoder.d_model})")
    tokens = np.zeros((batch, steps, decoder.d_model), dtype=memory.dtype)
    tokens[:, 0] = sos
    outputs = np.zeros_like(tokens)
    for t in range(steps):
        out = decoder(Tensor(tokens, dtype=memory.dtype), memory).data
        outputs[:, t] = out[:, t]
        if t + 1 < steps:
            tokens[:, t + 1] = out[:, t]
    return outputs
