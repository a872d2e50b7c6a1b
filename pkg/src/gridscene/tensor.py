"""Differentiable tensor values and the gradient tape.

A `Tensor` wraps an immutable numpy array plus a requires_grad flag.
Primitives in `gridscene.ops` compute forward results eagerly; while a
`Tape` is active they also append a step recording how to push an output
gradient back to the step's inputs.  `backward` replays the recorded steps
in reverse and returns one gradient array per watched leaf.

Tensors must not be mutated between the forward pass and `backward`; the
tape holds references, not copies.  Gradient checks and equivalence tests
run in float64, training typically in float32.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float64
FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Input shapes or attributes violate a primitive's contract."""


class ContractError(ValueError):
    """An operation was used outside its documented contract."""


class NumericError(ArithmeticError):
    """A primitive produced non-finite values."""


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


class TapeStep:
    __slots__ = ("kind", "inputs", "output", "pullback")

    def __init__(self, kind, inputs, output, pullback):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.pullback = pullback


_tape_stack: list["Tape"] = []


def active_tape():
    return _tape_stack[-1] if _tape_stack else None


class Tape:
    """Recorded history of primitive applications, in execution order.

    Use as a context manager around the forward pass.  Leaves (tensors with
    requires_grad that were not produced by a recorded step) register
    automatically when first consumed; parameters that might go unused in a
    particular graph should be registered up front with `watch` so backward
    can hand back zero gradients for them.
    """

    def __init__(self):
        self.steps: list[TapeStep] = []
        self.leaves: list[Tensor] = []
        self._leaf_ids: set[int] = set()
        self._produced: set[int] = set()

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        assert popped is self
        return False

    def watch(self, tensor: Tensor):
        if not tensor.requires_grad:
            raise ContractError("watch() on a tensor without requires_grad")
        self._register_leaf(tensor)

    def _register_leaf(self, tensor: Tensor):
        tid = id(tensor)
        if tid not in self._leaf_ids and tid not in self._produced:
            self._leaf_ids.add(tid)
            self.leaves.append(tensor)

    def record(self, kind, inputs, output, pullback):
        for t in inputs:
            if t.requires_grad:
                self._register_leaf(t)
        self._produced.add(id(output))
        self.steps.append(TapeStep(kind, inputs, output, pullback))


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar loss recorded on `tape`.

    Returns a dict keyed by leaf Tensor holding the gradient of `loss` with
    respect to that leaf (zeros for watched leaves the loss does not reach).
    Each recorded step is visited exactly once; the tape order is the
    execution order, so the reversed walk sees every consumer of a value
    before the step that produced it.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise ContractError("loss tensor was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for step in reversed(tape.steps):
        g_out = grads.pop(id(step.output), None)
        if g_out is None:
            continue
        for t, g in zip(step.inputs, step.pullback(g_out)):
            if g is None or not t.requires_grad:
                continue
            tid = id(t)
            if tid in grads:
                grads[tid] = grads[tid] + g
            else:
                grads[tid] = g
    return {leaf: grads.get(id(leaf), np.zeros_like(leaf.data)) for leaf in tape.leaves}
