"""Relational graph convolution.

For a target node ``a``::

    x'_a = relu( sum_r sum_{b in N_a^r} W_r x_b / |N_a^r|  +  W_0 x_a )

where ``N_a^r`` are the sources of edges ``(b, r, a)``. Weights are stored
``(Din, Dout)`` and applied as ``x @ W``.

The working implementation contracts a dense per-label normalised adjacency
``A[l, target, source]`` with the node features; it is shared by inference,
training, and :func:`rgcn_forward`. :func:`block_matrix_oracle` builds the
full ``(N*Dout, N*Din)`` message-passing matrix from the edge list instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..grid import LOCAL_OFFSETS, GridObservation, RuleSet, build_graph, grid_edges
from ..relgraph import RelationalGraph
from ..tensornet import conv2d_reference, glorot_uniform, relu, relu_backward


@dataclass
class RgcnLayer:
    labels: tuple[str, ...]
    weight: np.ndarray  # (L, Din, Dout)
    self_weight: np.ndarray  # (Din, Dout)
    activation: bool = True

    def __post_init__(self) -> None:
        self.labels = tuple(self.labels)
        if self.weight.shape[0] != len(self.labels):
            raise ValueError("one weight matrix per relation label is required")
        if self.weight.shape[1:] != self.self_weight.shape:
            raise ValueError("relation and self-loop weights must share a shape")

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        labels: Sequence[str],
        din: int,
        dout: int,
        activation: bool = True,
    ) -> "RgcnLayer":
        weight = glorot_uniform(rng, din, dout, shape=(len(labels), din, dout))
        return cls(tuple(labels), weight, glorot_uniform(rng, din, dout), activation)

    @property
    def din(self) -> int:
        return self.self_weight.shape[0]

    @property
    def dout(self) -> int:
        return self.self_weight.shape[1]

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.self_weight": self.self_weight}

    def num_parameters(self) -> int:
        return self.weight.size + self.self_weight.size


def _label_index(graph_labels: Sequence[str], layer_labels: Sequence[str]) -> np.ndarray:
    pos = {name: i for i, name in enumerate(layer_labels)}
    missing = [name for name in graph_labels if name not in pos]
    if missing:
        raise KeyError(f"relation labels unknown to the layer: {missing}")
    return np.array([pos[name] for name in graph_labels], dtype=np.int64)


def normalized_adjacency(graph: RelationalGraph, labels: Sequence[str]) -> np.ndarray:
    """``A[l, t, s] = 1 / |N_t^l|`` for each edge ``(s, l, t)``, in ``labels`` order."""
    adj = np.zeros((len(labels), graph.num_nodes, graph.num_nodes))
    if graph.num_edges:
        lab = _label_index(graph.relation_labels, labels)[graph.edges[:, 1]]
        np.add.at(adj, (lab, graph.edges[:, 2], graph.edges[:, 0]), 1.0)
    else:
        _label_index(graph.relation_labels, labels)
    deg = adj.sum(axis=2, keepdims=True)
    np.divide(adj, deg, out=adj, where=deg > 0)
    return adj


@lru_cache(maxsize=32)
def grid_adjacency(width: int, height: int, rules: RuleSet, labels: tuple[str, ...]) -> np.ndarray:
    """Cached :func:`normalized_adjacency` of a plain GTG grid graph."""
    n = width * height
    g = RelationalGraph(np.zeros((n, 0)), rules.labels, grid_edges(width, height, rules))
    adj = normalized_adjacency(g, labels)
    adj.setflags(write=False)
    return adj


def rgcn_layer_forward(layer: RgcnLayer, adjacency: np.ndarray, x: np.ndarray, activation=None):
    """Batched layer. ``adjacency`` is ``(L, N, N)`` or ``(B, L, N, N)``; ``x`` is ``(B, N, Din)``."""
    if x.shape[-1] != layer.din:
        raise ValueError(f"layer expects feature dim {layer.din}, got {x.shape[-1]}")
    adj = adjacency[None] if adjacency.ndim == 3 else adjacency
    b, n, din = x.shape
    n_labels = len(layer.labels)
    agg = np.matmul(adj, x[:, None])  # (B, L, N, Din)
    flat = agg.transpose(0, 2, 1, 3).reshape(b, n, n_labels * din)
    pre = flat @ layer.weight.reshape(n_labels * din, -1) + x @ layer.self_weight
    act = layer.activation if activation is None else activation
    out = relu(pre) if act else pre
    return out, (adj, x, flat, pre, act)


def rgcn_layer_backward(layer: RgcnLayer, cache, dy: np.ndarray, prefix: str = "rgcn"):
    adj, x, flat, pre, act = cache
    b, n, din = x.shape
    n_labels = len(layer.labels)
    dpre = relu_backward(pre, dy) if act else dy
    dpre2 = dpre.reshape(-1, layer.dout)
    w_flat = layer.weight.reshape(n_labels * din, -1)
    grads = {
        f"{prefix}.weight": (flat.reshape(-1, n_labels * din).T @ dpre2).reshape(layer.weight.shape),
        f"{prefix}.self_weight": x.reshape(-1, din).T @ dpre2,
    }
    dagg = (dpre @ w_flat.T).reshape(b, n, n_labels, din).transpose(0, 2, 1, 3)
    dx = dpre @ layer.self_weight.T + np.matmul(adj.transpose(0, 1, 3, 2), dagg).sum(axis=1)
    return dx, grads


def rgcn_forward(
    layer: RgcnLayer,
    graph: RelationalGraph,
    node_features: np.ndarray | None = None,
    activation: bool | None = None,
) -> np.ndarray:
    """Single-graph update; ``node_features`` default to the graph's own."""
    x = graph.node_features if node_features is None else np.asarray(node_features, dtype=np.float64)
    adj = normalized_adjacency(graph, layer.labels)
    out, _ = rgcn_layer_forward(layer, adj, x[None], activation)
    return out[0]


def block_matrix_oracle(
    layer: RgcnLayer, graph: RelationalGraph, node_features: np.ndarray | None = None
) -> np.ndarray:
    """Pre-activation output via the explicit block message-passing matrix.

    Block ``(a, b)`` is ``sum_{r in R_ba} W_r^T / c_{a,r}`` plus ``W_0^T`` when
    ``a == b``; the result is ``A @ concat(x_1..x_n)`` reshaped to ``(N, Dout)``.
    """
    x = graph.node_features if node_features is None else np.asarray(node_features, dtype=np.float64)
    n, din, dout = graph.num_nodes, layer.din, layer.dout
    label_pos = {name: i for i, name in enumerate(layer.labels)}
    in_degree: dict[tuple[int, str], int] = {}
    for s, r, t in graph.edges.tolist():
        key = (t, graph.relation_labels[r])
        in_degree[key] = in_degree.get(key, 0) + 1
    big = np.zeros((n * dout, n * din))
    for a in range(n):
        big[a * dout : (a + 1) * dout, a * din : (a + 1) * din] += layer.self_weight.T
    for s, r, t in graph.edges.tolist():
        name = graph.relation_labels[r]
        if name not in label_pos:
            raise KeyError(f"relation label unknown to the layer: {name}")
        w = layer.weight[label_pos[name]]
        big[t * dout : (t + 1) * dout, s * din : (s + 1) * din] += w.T / in_degree[(t, name)]
    return (big @ x.reshape(-1)).reshape(n, dout)


def conv_kernel_to_layer(kernel: np.ndarray) -> RgcnLayer:
    """Linear local-only layer whose taps are those of a ``3x3xCinxCout`` kernel.

    A local label with source-minus-target offset ``(dx, dy)`` takes tap
    ``kernel[1 + dx, 1 + dy]``; the centre tap becomes the self-loop weight.
    """
    labels = RuleSet(local=True, remote=False, aux=False).labels
    weight = np.stack([kernel[1 + LOCAL_OFFSETS[l][0], 1 + LOCAL_OFFSETS[l][1]] for l in labels])
    return RgcnLayer(labels, weight.copy(), kernel[1, 1].copy(), activation=False)


def rgcn_conv_equivalence(obs: GridObservation, kernel: np.ndarray):
    """Returns ``(rgcn_out, conv_out)``, both ``W x H x Cout``."""
    kernel = np.asarray(kernel, dtype=np.float64)
    layer = conv_kernel_to_layer(kernel)
    graph = build_graph(obs, RuleSet(local=True, remote=False, aux=False))
    out = rgcn_forward(layer, graph, activation=False)
    rgcn_out = out.reshape(obs.height, obs.width, -1).transpose(1, 0, 2)
    return rgcn_out, conv2d_reference(obs.features, kernel)
