import numpy as np
import pytest

from gridscene import ops
from gridscene.tensor import ContractError, NumericError, Tape, Tensor, backward


def test_default_dtype_is_float64():
    t = Tensor([1, 2, 3])
    assert t.dtype == np.float64


def test_float32_arrays_are_kept():
    t = Tensor(np.zeros(3, dtype=np.float32))
    assert t.dtype == np.float32


def test_item_rejects_non_scalars():
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()


def test_detach_drops_grad_flag():
    t = Tensor([1.0], requires_grad=True)
    d = t.detach()
    assert not d.requires_grad
    assert np.array_equal(d.data, t.data)


def test_backward_rejects_non_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ops.add(x, x)
    with pytest.raises(ContractError):
        backward(tape, y)


def test_backward_rejects_off_tape_loss():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        ops.add(x, x)
    stray = ops.mse(x, Tensor([0.0]))
    with pytest.raises(ContractError):
        backward(tape, stray)


def test_grad_accumulates_over_consumers():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        y = ops.add(x, x)
        loss = ops.mse(y, Tensor(np.zeros(2)))
    grads = backward(tape, loss)
    # d/dx mean((2x)^2) = 4x
    assert np.allclose(grads[x], 4 * x.data)


def test_unused_watched_leaf_gets_zero_grad():
    used = Tensor([1.0], requires_grad=True)
    unused = Tensor([5.0, 6.0], requires_grad=True)
    with Tape() as tape:
        tape.watch(used)
        tape.watch(unused)
        loss = ops.mse(used, Tensor([0.0]))
    grads = backward(tape, loss)
    assert np.array_equal(grads[unused], np.zeros(2))
    assert grads[used].shape == (1,)


def test_watch_requires_grad_flag():
    with Tape() as tape:
        with pytest.raises(ContractError):
            tape.watch(Tensor([1.0]))


def test_no_recording_without_tape():
    x = Tensor([1.0], requires_grad=True)
    y = ops.add(x, x)
    assert y.requires_grad  # flag propagates even without a tape


def test_non_finite_output_raises():
    big = Tensor([1e308], requires_grad=True)
    with np.errstate(over="ignore"):
        with pytest.raises(NumericError):
            ops.add(big, big)
