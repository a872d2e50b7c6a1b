import numpy as np
import pytest

from gridscene import ops
from gridscene.tensor import ContractError, ShapeError, Tensor


def test_add_broadcasts_bias_row(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal(4))
    out = ops.add(x, b)
    assert np.allclose(out.data, x.data + b.data)


def test_add_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 5))))


def test_relu_zeroes_negatives():
    out = ops.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_sigmoid_is_stable_at_extremes():
    out = ops.sigmoid(Tensor([-1000.0, 0.0, 1000.0]))
    assert np.allclose(out.data, [0.0, 0.5, 1.0])


def test_softmax_rows_sum_to_one(rng):
    out = ops.softmax(Tensor(rng.standard_normal((5, 7))), axis=-1)
    assert np.allclose(out.data.sum(axis=-1), 1.0)


def test_softmax_masked_entries_are_exact_zero(rng):
    x = Tensor(rng.standard_normal((4, 6)))
    mask = np.zeros((4, 6), dtype=bool)
    mask[:, 3:] = True
    out = ops.softmax(x, axis=-1, mask=mask)
    # exact literal zeros, not small numbers
    assert (out.data[:, 3:] == 0.0).all()
    assert np.allclose(out.data.sum(axis=-1), 1.0)


def test_softmax_fully_masked_row_rejected(rng):
    mask = np.ones((2, 3), dtype=bool)
    with pytest.raises(ContractError):
        ops.softmax(Tensor(rng.standard_normal((2, 3))), axis=-1, mask=mask)


def test_layer_norm_normalizes_before_affine(rng):
    d = 32
    x = Tensor(rng.standard_normal((10, d)) * 3 + 1)
    out = ops.layer_norm(x, Tensor(np.ones(d)), Tensor(np.zeros(d)))
    mean = out.data.mean(axis=-1)
    var = (out.data**2).mean(axis=-1) - mean**2
    assert np.abs(mean).max() < 1e-6
    assert np.abs(var - 1.0).max() < 1e-6


def test_layer_norm_shape_validation(rng):
    x = Tensor(rng.standard_normal((2, 8)))
    with pytest.raises(ShapeError):
        ops.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))


def test_mse_of_identical_inputs_is_zero(rng):
    x = Tensor(rng.standard_normal((5, 5)))
    assert ops.mse(x, x).item() == 0.0


def test_mse_matches_numpy(rng):
    a = Tensor(rng.standard_normal((4, 6)))
    b = Tensor(rng.standard_normal((4, 6)))
    assert ops.mse(a, b).item() == pytest.approx(((a.data - b.data) ** 2).mean())


def test_matmul_batched_against_loop(rng):
    a = Tensor(rng.standard_normal((3, 4, 5)))
    b = Tensor(rng.standard_normal((3, 5, 2)))
    out = ops.matmul(a, b)
    for i in range(3):
        assert np.allclose(out.data[i], a.data[i] @ b.data[i])


def test_matmul_inner_dim_mismatch(rng):
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 2))))


def test_embedding_rejects_out_of_range(rng):
    table = Tensor(rng.standard_normal((5, 8)))
    with pytest.raises(ShapeError):
        ops.embedding(table, np.array([0, 5]))


def test_embedding_looks_up_rows(rng):
    table = Tensor(rng.standard_normal((5, 8)))
    ids = np.array([3, 0, 3])
    out = ops.embedding(table, ids)
    assert np.array_equal(out.data, table.data[ids])


def test_concat_then_split_round_trip(rng):
    a = Tensor(rng.standard_normal((2, 3)))
    b = Tensor(rng.standard_normal((4, 3)))
    out = ops.concat([a, b], axis=0)
    assert np.array_equal(out.data[:2], a.data)
    assert np.array_equal(out.data[2:], b.data)


def test_conv2d_matches_direct_convolution(rng):
    x = Tensor(rng.standard_normal((1, 2, 5, 5)))
    k = Tensor(rng.standard_normal((3, 2, 3, 3)))
    out = ops.conv2d(x, k, stride=1, pad=1)
    assert out.shape == (1, 3, 5, 5)
    # brute-force one output position
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    want = (xp[0, :, 1:4, 2:5] * k.data[1]).sum()
    assert out.data[0, 1, 1, 2] == pytest.approx(want)


def test_conv2d_rejects_ragged_tiling(rng):
    x = Tensor(rng.standard_normal((1, 1, 5, 5)))
    k = Tensor(rng.standard_normal((1, 1, 4, 4)))
    with pytest.raises(ShapeError):
        ops.conv2d(x, k, stride=2, pad=1)


def test_conv_transpose_is_exact_adjoint(rng):
    # <conv(x), y> == <x, conv_transpose(y)> for every stride/pad used here
    for stride, pad, kside, h in [(1, 1, 3, 6), (2, 1, 4, 6)]:
        x = Tensor(rng.standard_normal((2, 3, h, h)))
        k = Tensor(rng.standard_normal((4, 3, kside, kside)))
        y_shape_h = (h + 2 * pad - kside) // stride + 1
        y = Tensor(rng.standard_normal((2, 4, y_shape_h, y_shape_h)))
        lhs = float((ops.conv2d(x, k, stride, pad).data * y.data).sum())
        rhs = float((x.data * ops.conv_transpose2d(y, k, stride, pad).data).sum())
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_conv_transpose_output_size(rng):
    y = Tensor(rng.standard_normal((1, 4, 8, 8)))
    k = Tensor(rng.standard_normal((4, 2, 4, 4)))
    out = ops.conv_transpose2d(y, k, stride=2, pad=1)
    assert out.shape == (1, 2, 16, 16)


def test_upsample_preserves_constants():
    x = Tensor(np.full((1, 1, 4, 4), 0.7))
    out = ops.upsample_bilinear2d(x, factor=2)
    assert out.shape == (1, 1, 8, 8)
    assert np.allclose(out.data, 0.7)


def test_upsample_keeps_interior_linear_ramp():
    ramp = np.arange(4, dtype=float)[None, None, None, :].repeat(4, axis=2)
    out = ops.upsample_bilinear2d(Tensor(ramp), factor=2).data[0, 0, 0]
    # interior output samples sit on the same line (slope 1/2 in output coords)
    inner = out[1:-1]
    assert np.allclose(np.diff(inner), 0.5)


def test_avg_pool_matches_block_means(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 6)))
    out = ops.avg_pool2d(x, (2, 3))
    assert out.shape == (2, 3, 2, 2)
    assert out.data[1, 2, 0, 1] == pytest.approx(x.data[1, 2, 0:2, 3:6].mean())


def test_avg_pool_global_window(rng):
    x = Tensor(rng.standard_normal((2, 5, 4, 4)))
    out = ops.avg_pool2d(x, (4, 4))
    assert np.allclose(out.data[:, :, 0, 0], x.data.mean(axis=(2, 3)))


def test_apply_primitive_dispatch(rng):
    out = ops.apply_primitive("scale", [Tensor([2.0])], {"factor": 3.0})
    assert out.item() == 6.0
    with pytest.raises(ContractError):
        ops.apply_primitive("no_such_op", [])


def test_transpose_round_trip(rng):
    x = Tensor(rng.standard_normal((2, 3, 4)))
    out = ops.transpose(ops.transpose(x, (2, 0, 1)), (1, 2, 0))
    assert np.array_equal(out.data, x.data)
