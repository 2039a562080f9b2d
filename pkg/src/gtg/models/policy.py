"""Actor-critic networks: a front end, pooling, and separate policy/value MLPs.

    logits = MLP_pi(pool(front_end(X, G)))
    value  = MLP_v (pool(front_end(X, G)))

Front ends: ``rgcn`` (R-GCN + node max-pool), ``nlm`` (NLM; pooled output is
the last nullary vector concatenated with max-pooled unary vectors), ``cnn``
(3x3 convolutions, flattened or max-pooled) and ``cnn_wide`` (wider flattened
convolutions).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..grid import GridObservation, RuleSet, grid_edges
from ..relgraph import RelationalGraph
from ..tensornet import MlpParams, maxpool_nodes, maxpool_nodes_backward, mlp_backward, mlp_forward
from .cnn import ConvStack, conv_stack_backward, conv_stack_forward
from .nlm import NlmLayer, nlm_layer_backward, nlm_layer_forward
from .rgcn import (
    RgcnLayer,
    _label_index,
    grid_adjacency,
    normalized_adjacency,
    rgcn_layer_backward,
    rgcn_layer_forward,
)

FRONT_ENDS = ("rgcn", "nlm", "cnn", "cnn_wide")
GRAPH_FRONT_ENDS = ("rgcn", "nlm")


@dataclass
class ModelConfig:
    front_end: str = "rgcn"
    rules: str = "local,remote,aux"
    hidden: int = 64
    layers: int = 2
    mlp_hidden: int = 128
    mlp_layers: int = 2
    cnn_features: int = 12
    cnn_wide_features: int = 64
    cnn_pool: str = "flatten"
    nlm_nullary: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.front_end not in FRONT_ENDS:
            raise ValueError(f"front_end must be one of {FRONT_ENDS}, got {self.front_end!r}")
        RuleSet.parse(self.rules)

    @property
    def rule_set(self) -> RuleSet:
        return RuleSet.parse(self.rules)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ObservationSpec:
    """What a network needs to know about its inputs at construction time."""

    in_channels: int
    num_actions: int
    labels: tuple[str, ...] = ()
    grid_size: tuple[int, int] | None = None


@dataclass
class GraphBatch:
    features: np.ndarray  # (B, N, C)
    adjacency: np.ndarray | None = None  # (1|B, L, N, N), A[l, target, source]
    relations: np.ndarray | None = None  # (1|B, N, N, L), binary, [source, target]

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass
class GridBatch:
    features: np.ndarray  # (B, W, H, C)

    @property
    def size(self) -> int:
        return self.features.shape[0]


def relation_tensor(graph: RelationalGraph, labels: Sequence[str]) -> np.ndarray:
    """``R[s, t, l] = 1`` for every edge ``(s, l, t)``."""
    rel = np.zeros((graph.num_nodes, graph.num_nodes, len(labels)))
    if graph.num_edges:
        lab = _label_index(graph.relation_labels, labels)[graph.edges[:, 1]]
        rel[graph.edges[:, 0], graph.edges[:, 2], lab] = 1.0
    return rel


@lru_cache(maxsize=32)
def grid_relations(width: int, height: int, rules: RuleSet, labels: tuple[str, ...]) -> np.ndarray:
    n = width * height
    g = RelationalGraph(np.zeros((n, 0)), rules.labels, grid_edges(width, height, rules))
    rel = relation_tensor(g, labels)
    rel.setflags(write=False)
    return rel


class PolicyNet:
    def __init__(self, config: ModelConfig, spec: ObservationSpec):
        self.config = config
        self.spec = spec
        self.front_end = config.front_end
        self.rules = config.rule_set
        self.labels = tuple(spec.labels) if spec.labels else self.rules.labels
        rng = np.random.default_rng(config.seed)
        c = spec.in_channels

        self.rgcn_layers: list[RgcnLayer] = []
        self.nlm_layers: list[NlmLayer] = []
        self.conv: ConvStack | None = None
        if self.front_end == "rgcn":
            dims = [c] + [config.hidden] * config.layers
            self.rgcn_layers = [
                RgcnLayer.init(rng, self.labels, a, b) for a, b in zip(dims[:-1], dims[1:])
            ]
            pooled = dims[-1]
        elif self.front_end == "nlm":
            h = config.hidden
            dims_in = (config.nlm_nullary, c, len(self.labels))
            for i in range(config.layers):
                last = i == config.layers - 1
                self.nlm_layers.append(NlmLayer.init(rng, dims_in, (h, h, h), with_binary=not last))
                dims_in = (h, h, h)
            pooled = 2 * h
        else:
            width = config.cnn_features if self.front_end == "cnn" else config.cnn_wide_features
            pool = config.cnn_pool if self.front_end == "cnn" else "flatten"
            self.conv = ConvStack.init(rng, c, width, config.layers, pool, spec.grid_size)
            pooled = self.conv.out_dim
        self.pooled_dim = pooled
        hidden = [config.mlp_hidden] * config.mlp_layers
        self.policy_head = MlpParams.init(rng, [pooled, *hidden, spec.num_actions])
        self.value_head = MlpParams.init(rng, [pooled, *hidden, 1])

    @property
    def is_graph_model(self) -> bool:
        return self.front_end in GRAPH_FRONT_ENDS

    @property
    def size_agnostic(self) -> bool:
        return self.conv is None or self.conv.pooling == "maxpool"

    def parameters(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.rgcn_layers):
            params.update(layer.named(f"rgcn.{i}"))
        for i, layer in enumerate(self.nlm_layers):
            params.update(layer.named(f"nlm.{i}"))
        if self.conv is not None:
            params.update(self.conv.named("cnn"))
        params.update(self.policy_head.named("policy"))
        params.update(self.value_head.named("value"))
        return params

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def load_parameters(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(tensors)
        extra = set(tensors) - set(params)
        if missing or extra:
            raise ValueError(
                f"checkpoint does not match network: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in params.items():
            if tensors[name].shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {tensors[name].shape} != {p.shape}")
            p[...] = tensors[name]

    # -- front ends -------------------------------------------------------

    def _front_forward(self, batch):
        if self.front_end == "rgcn":
            h = batch.features
            caches = []
            for layer in self.rgcn_layers:
                h, cache = rgcn_layer_forward(layer, batch.adjacency, h)
                caches.append(cache)
            pooled, idx = maxpool_nodes(h)
            return pooled, (caches, idx, h.shape[1])
        if self.front_end == "nlm":
            v = batch.features
            b = v.shape[0]
            g = np.zeros((b, self.config.nlm_nullary))
            r = np.broadcast_to(batch.relations, (b,) + batch.relations.shape[1:])
            caches = []
            for layer in self.nlm_layers:
                (g, v, r), cache = nlm_layer_forward(layer, g, v, r)
                caches.append(cache)
            vmax, idx = maxpool_nodes(v)
            return np.concatenate([g, vmax], axis=-1), (caches, idx, v.shape[1], g.shape[1])
        return conv_stack_forward(self.conv, batch.features)

    def _front_backward(self, cache, dpooled):
        grads = {}
        if self.front_end == "rgcn":
            caches, idx, n = cache
            g = maxpool_nodes_backward(idx, n, dpooled)
            for i in range(len(self.rgcn_layers) - 1, -1, -1):
                g, gr = rgcn_layer_backward(self.rgcn_layers[i], caches[i], g, f"rgcn.{i}")
                grads.update(gr)
            return grads
        if self.front_end == "nlm":
            caches, idx, n, dg_dim = cache
            dg = dpooled[:, :dg_dim]
            dv = maxpool_nodes_backward(idx, n, dpooled[:, dg_dim:])
            dr = None
            for i in range(len(self.nlm_layers) - 1, -1, -1):
                dg, dv, dr, gr = nlm_layer_backward(self.nlm_layers[i], caches[i], dg, dv, dr, f"nlm.{i}")
                grads.update(gr)
            return grads
        _, gr = conv_stack_backward(self.conv, cache, dpooled, "cnn")
        return gr

    # -- full network -----------------------------------------------------

    def forward(self, batch):
        pooled, front = self._front_forward(batch)
        logits, pc = mlp_forward(self.policy_head, pooled)
        value, vc = mlp_forward(self.value_head, pooled)
        return logits, value[:, 0], (front, pc, vc)

    def backward(self, cache, dlogits: np.ndarray, dvalues: np.ndarray) -> dict[str, np.ndarray]:
        front, pc, vc = cache
        dp1, grads = mlp_backward(self.policy_head, pc, dlogits, "policy")
        dp2, gv = mlp_backward(self.value_head, vc, dvalues[:, None], "value")
        grads.update(gv)
        grads.update(self._front_backward(front, dp1 + dp2))
        return grads

    # -- single-input convenience -----------------------------------------

    def graph_batch(self, graphs: Sequence[RelationalGraph]) -> GraphBatch:
        feats = np.stack([g.node_features for g in graphs])
        if self.front_end == "rgcn":
            return GraphBatch(feats, adjacency=np.stack([normalized_adjacency(g, self.labels) for g in graphs]))
        return GraphBatch(feats, relations=np.stack([relation_tensor(g, self.labels) for g in graphs]))

    def grid_batch(self, grids: Sequence[GridObservation]) -> GraphBatch | GridBatch:
        """Plain GTG graphs (or raw maps for CNNs) for same-sized grids."""
        w, h = grids[0].width, grids[0].height
        if not self.is_graph_model:
            return GridBatch(np.stack([g.features for g in grids]))
        feats = np.stack([g.node_features() for g in grids])
        if self.front_end == "rgcn":
            return GraphBatch(feats, adjacency=grid_adjacency(w, h, self.rules, self.labels))
        return GraphBatch(feats, relations=grid_relations(w, h, self.rules, self.labels)[None])


def policy_forward(net: PolicyNet, graph_or_grid) -> tuple[np.ndarray, float]:
    """``(action_logits, value)`` for one graph or grid observation."""
    if isinstance(graph_or_grid, RelationalGraph):
        if not net.is_graph_model:
            raise TypeError(f"{net.front_end} networks take grid observations")
        batch = net.graph_batch([graph_or_grid])
    elif isinstance(graph_or_grid, GridObservation):
        batch = net.grid_batch([graph_or_grid])
    else:
        raise TypeError(f"unsupported input {type(graph_or_grid).__name__}")
    logits, value, _ = net.forward(batch)
    return logits[0], float(value[0])

