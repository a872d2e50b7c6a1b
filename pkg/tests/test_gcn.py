import numpy as np
import pytest

from gridscene import gradcheck, ops
from gridscene.gcn import (
    embed_graph,
    gcn_forward,
    init_gcn_params,
    normalized_adjacency,
    relation_counts,
)
from gridscene.scenegraph import SceneGraph
from gridscene.tensor import ShapeError, Tensor


def _graph(nodes, edges):
    return SceneGraph(tuple(nodes), tuple(edges))


def test_normalized_adjacency_two_node_oracle():
    # one edge: A+I is all ones, both degrees 2, every entry 1/2
    g = _graph([(0, 1), (1, 2)], [(0, "left_of", 1)])
    p = normalized_adjacency(g)
    assert np.allclose(p, 0.5)


def test_normalized_adjacency_isolated_node():
    g = _graph([(0, 1), (1, 2), (2, 3)], [(0, "above", 1)])
    p = normalized_adjacency(g)
    assert p[2, 2] == 1.0
    assert p[2, 0] == p[2, 1] == 0.0
    assert np.allclose(p, p.T)


def test_relation_counts_at_source():
    g = _graph(
        [(0, 1), (1, 2), (2, 3)],
        [(0, "left_of", 1), (0, "left_of", 2), (2, "above", 0)],
    )
    counts = relation_counts(g)
    assert counts[0, 0] == 2.0  # two outgoing left_of at node 0
    assert counts[2, 2] == 1.0  # one outgoing above at node 2
    assert counts[1].sum() == 0.0  # node 1 has no outgoing edges


def test_forward_shape_and_determinism(rng):
    params = init_gcn_params(10, rng, width=64)
    g = _graph([(0, 3), (1, 5), (2, 9)], [(0, "left_of", 1), (1, "above", 2)])
    out = gcn_forward(g, params)
    assert out.shape == (3, 64)
    again = gcn_forward(g, params)
    assert np.array_equal(out.data, again.data)


def test_permutation_equivariance(rng):
    params = init_gcn_params(10, rng, width=32, layers=3)
    edges = [(0, "left_of", 1), (1, "above", 2), (3, "below", 0)]
    nodes = [(0, 3), (1, 5), (2, 9), (3, 0)]
    g = _graph(nodes, edges)
    out = gcn_forward(g, params).data

    perm = [2, 0, 3, 1]
    g_perm = _graph([nodes[i] for i in perm], edges)
    out_perm = gcn_forward(g_perm, params).data
    for row, original_row in enumerate(perm):
        assert np.abs(out_perm[row] - out[original_row]).max() < 1e-9


def test_out_of_range_label_rejected(rng):
    params = init_gcn_params(10, rng, width=16)
    g = _graph([(0, 12)], [])
    with pytest.raises(ShapeError, match="range"):
        gcn_forward(g, params)


def test_edgeless_graph_has_zero_relation_term(rng):
    params = init_gcn_params(10, rng, width=16)
    g = _graph([(0, 1), (1, 2)], [])
    tensors = embed_graph(g, params)
    assert np.array_equal(tensors.rel_sum.data, np.zeros((2, 16)))
    out = gcn_forward(g, params)
    assert out.shape == (2, 16)


def test_gcn_gradients_pass_finite_difference(rng):
    params = init_gcn_params(6, rng, width=8, layers=2)
    g = _graph([(0, 2), (1, 4), (2, 1)], [(0, "left_of", 1), (2, "above", 0)])
    target = Tensor(rng.standard_normal((3, 8)))

    def loss_fn():
        return ops.mse(gcn_forward(g, params), target)

    err = gradcheck.check_composite(loss_fn, params.named(), rng, max_coords=120)
    assert err < gradcheck.TOLERANCE
