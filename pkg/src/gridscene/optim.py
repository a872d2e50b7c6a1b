"""Adam updates and gradient clipping over named parameter dicts.

Parameters live in dicts mapping name -> Tensor; gradients arrive as dicts
mapping the same names to numpy arrays (see `training.collect_grads`).
`adam_step` rebinds each Tensor's data to a fresh array, which is safe
because updates happen strictly after `backward` has consumed the tape.
"""

from __future__ import annotations

import numpy as np

from .tensor import NumericError, ShapeError, Tensor


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, params: dict[str, Tensor], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, in place on the parameter tensors."""
    if set(params) != set(state.m):
        raise ShapeError("adam_step: parameter names do not match optimizer state")
    state.step_count += 1
    c1 = 1.0 - state.beta1 ** state.step_count
    c2 = 1.0 - state.beta2 ** state.step_count
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ShapeError(f"adam_step: missing gradient for {name!r}")
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != param shape {p.data.shape} for {name!r}")
        if not np.isfinite(g).all():
            raise NumericError(f"adam_step: non-finite gradient for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if not np.isfinite(update).all():
            raise NumericError(f"adam_step: non-finite update for {name!r}")
        p.data = p.data - update


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.  Clipping is skipped when max_norm <= 0.
    """
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * factor
    return norm
