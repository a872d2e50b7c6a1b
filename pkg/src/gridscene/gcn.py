"""Relational graph convolution over scene graphs.

Node states start as label embeddings.  Each layer adds the summed relation
embeddings of a node's outgoing edges to its state, propagates through the
degree-normalized adjacency P = D^-1/2 (A + I) D^-1/2 (symmetrized over
edge direction), applies a square weight matrix, and a relu:

    H' = relu(P (H + R) W)

Node order follows the graph's node list, so permuting the list permutes
the output rows and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .scenegraph import RELATIONS, SceneGraph
from .tensor import Tensor


@dataclass
class GcnParams:
    node_emb: Tensor  # (num_labels, width)
    rel_emb: Tensor  # (len(RELATIONS), width)
    weights: list[Tensor]  # one (width, width) matrix per layer

    @property
    def width(self) -> int:
        return self.node_emb.shape[1]

    def named(self, prefix: str = "gcn") -> dict[str, Tensor]:
        out = {f"{prefix}.node_emb": self.node_emb, f"{prefix}.rel_emb": self.rel_emb}
        for i, w in enumerate(self.weights):
            out[f"{prefix}.layer{i}.w"] = w
        return out


def init_gcn_params(num_labels, rng, width=64, layers=3, dtype=np.float64) -> GcnParams:
    limit = np.sqrt(6.0 / (width + width))
    return GcnParams(
        node_emb=Tensor(rng.normal(0.0, 0.02, (num_labels, width)), True, dtype),
        rel_emb=Tensor(rng.normal(0.0, 0.02, (len(RELATIONS), width)), True, dtype),
        weights=[
            Tensor(rng.uniform(-limit, limit, (width, width)), True, dtype)
            for _ in range(layers)
        ],
    )


def normalized_adjacency(graph: SceneGraph) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with A symmetrized over edge direction."""
    index = {nid: i for i, (nid, _) in enumerate(graph.nodes)}
    n = len(index)
    a = np.eye(n)
    for src, _, dst in graph.edges:
        a[index[src], index[dst]] = 1.0
        a[index[dst], index[src]] = 1.0
    inv_sqrt_deg = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]


def relation_counts(graph: SceneGraph) -> np.ndarray:
    """(n, relations) matrix counting each node's outgoing edges by kind."""
    index = {nid: i for i, (nid, _) in enumerate(graph.nodes)}
    counts = np.zeros((len(index), len(RELATIONS)))
    for src, rel, _ in graph.edges:
        counts[index[src], RELATIONS.index(rel)] += 1.0
    return counts


@dataclass
class GraphTensors:
    h: Tensor  # (n, width) node states
    prop: Tensor  # (n, n) constant propagation matrix
    rel_sum: Tensor  # (n, width) relation embeddings summed at source nodes


def embed_graph(graph: SceneGraph, params: GcnParams) -> GraphTensors:
    dtype = params.node_emb.dtype
    labels = np.array([label for _, label in graph.nodes], dtype=np.int64)
    h = ops.embedding(params.node_emb, labels)
    rel_sum = ops.matmul(Tensor(relation_counts(graph), dtype=dtype), params.rel_emb)
    prop = Tensor(normalized_adjacency(graph), dtype=dtype)
    return GraphTensors(h, prop, rel_sum)


def gcn_layer(tensors: GraphTensors, weight: Tensor) -> Tensor:
    mixed = ops.matmul(tensors.prop, ops.add(tensors.h, tensors.rel_sum))
    return ops.relu(ops.matmul(mixed, weight))


def gcn_forward(graph: SceneGraph, params: GcnParams) -> Tensor:
    """(n, width) node features after all propagation layers."""
    tensors = embed_graph(graph, params)
    for weight in params.weights:
        tensors = GraphTensors(gcn_layer(tensors, weight), tensors.prop, tensors.rel_sum)
    return tensors.h
