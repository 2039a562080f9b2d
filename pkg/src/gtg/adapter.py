"""Turning environment observations into network inputs.

For graph models an observation becomes::

    GTG(grid) -> rewire portals -> merge KB graph (grounded entities onto cells)

KB labels are namespaced ``kb:<predicate>`` and the KB's unary predicates are
appended to the cell feature vectors. Conceptual entities with no grounding
become extra nodes.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .envs import GridEnv, Observation
from .envs.rtfm import Rtfm, kb_signature
from .grid import RuleSet, build_graph, grid_edges, rewire_portals
from .models.policy import GraphBatch, GridBatch, ModelConfig, ObservationSpec, PolicyNet
from .models.rgcn import grid_adjacency, normalized_adjacency
from .relgraph import RelationalGraph, kb_to_graph, merge_graphs

KB_NAMESPACE = "kb"


def kb_labels(binary: Sequence[str]) -> tuple[str, ...]:
    return tuple(f"{KB_NAMESPACE}:{b}" for b in binary)


def observation_spec(env: GridEnv, config: ModelConfig) -> ObservationSpec:
    rules = config.rule_set
    labels = rules.labels
    channels = env.num_channels
    graph_model = config.front_end in ("rgcn", "nlm")
    if isinstance(env, Rtfm) and graph_model:
        unary, binary = kb_signature(env.variant)
        labels = labels + kb_labels(binary)
        channels += len(unary)
    return ObservationSpec(channels, env.num_actions, labels, (env.width, env.height))


def observation_graph(obs: Observation, rules: RuleSet) -> RelationalGraph:
    """The full relational graph of one observation (the reference construction)."""
    g = build_graph(obs.grid, rules)
    if obs.portal_pairs:
        g = rewire_portals(g, obs.portal_pairs)
    if obs.kb is not None:
        kg = kb_to_graph(obs.kb)
        index = {name: i for i, name in enumerate(obs.kb.entities)}
        mapping = {index[name]: cell for name, cell in obs.grounding.items()}
        g = merge_graphs(g, kg, mapping, namespace=KB_NAMESPACE)
    return g


@lru_cache(maxsize=256)
def _portal_adjacency(width, height, rules, labels, pairs):
    n = width * height
    g = RelationalGraph(np.zeros((n, 0)), rules.labels, grid_edges(width, height, rules))
    adj = normalized_adjacency(rewire_portals(g, pairs), labels)
    adj.setflags(write=False)
    return adj


def _spatial_adjacency(obs: Observation, rules: RuleSet, labels) -> np.ndarray:
    w, h = obs.grid.width, obs.grid.height
    if obs.portal_pairs:
        return _portal_adjacency(w, h, rules, labels, tuple(obs.portal_pairs))
    return grid_adjacency(w, h, rules, labels)


def _kb_part(obs: Observation, n_cells: int):
    """KB graph re-indexed onto merged node ids, plus merged unary features."""
    kg = kb_to_graph(obs.kb)
    index = {name: i for i, name in enumerate(obs.kb.entities)}
    new_id = np.empty(kg.num_nodes, dtype=np.int64)
    extra = n_cells
    grounded = {index[name]: cell for name, cell in obs.grounding.items()}
    for i in range(kg.num_nodes):
        if i in grounded:
            new_id[i] = grounded[i]
        else:
            new_id[i] = extra
            extra += 1
    feats = np.zeros((extra, kg.feature_dim))
    np.maximum.at(feats, new_id, kg.node_features)
    edges = kg.edges.copy()
    if len(edges):
        edges[:, 0] = new_id[edges[:, 0]]
        edges[:, 2] = new_id[edges[:, 2]]
    return extra, feats, edges, kg.relation_labels


class Batcher:
    """Builds batches for one network; graph pieces that depend only on geometry are cached.

    ``adjacency``/``relations`` agree exactly with running
    :func:`normalized_adjacency` / :func:`relation_tensor` on
    :func:`observation_graph`, because spatial and KB labels never mix.
    """

    def __init__(self, net: PolicyNet):
        self.net = net
        self.rules = net.rules
        self.labels = net.labels

    def node_inputs(self, obs: Observation):
        """``(features, adjacency-or-relations)`` for one observation."""
        cells = obs.grid.node_features()
        n_cells = cells.shape[0]
        spatial = _spatial_adjacency(obs, self.rules, self.labels)
        if obs.kb is None:
            if self.net.front_end == "rgcn":
                return cells, spatial
            return cells, self._relations_from_adjacency(spatial)
        n, kb_feats, kb_edges, kb_names = _kb_part(obs, n_cells)
        feats = np.zeros((n, cells.shape[1] + kb_feats.shape[1]))
        feats[:n_cells, : cells.shape[1]] = cells
        feats[:, cells.shape[1] :] = kb_feats
        label_pos = {name: i for i, name in enumerate(self.labels)}
        lab = np.array([label_pos[f"{KB_NAMESPACE}:{kb_names[r]}"] for r in kb_edges[:, 1]], dtype=np.int64)
        if self.net.front_end == "rgcn":
            adj = np.zeros((len(self.labels), n, n))
            adj[:, :n_cells, :n_cells] = spatial
            if len(kb_edges):
                kb_adj = np.zeros_like(adj)
                kb_adj[lab, kb_edges[:, 2], kb_edges[:, 0]] = 1.0
                deg = kb_adj.sum(axis=2, keepdims=True)
                np.divide(kb_adj, deg, out=kb_adj, where=deg > 0)
                adj += kb_adj
            return feats, adj
        rel = np.zeros((n, n, len(self.labels)))
        rel[:n_cells, :n_cells] = self._relations_from_adjacency(spatial)
        if len(kb_edges):
            rel[kb_edges[:, 0], kb_edges[:, 2], lab] = 1.0
        return feats, rel

    @staticmethod
    def _relations_from_adjacency(adj: np.ndarray) -> np.ndarray:
        return (adj > 0).transpose(2, 1, 0).astype(np.float64)

    def batch(self, observations: Sequence[Observation]):
        net = self.net
        if not net.is_graph_model:
            return GridBatch(np.stack([o.grid.features for o in observations]))
        plain = all(o.kb is None and not o.portal_pairs for o in observations)
        sizes = {(o.grid.width, o.grid.height) for o in observations}
        if plain and len(sizes) == 1:
            return net.grid_batch([o.grid for o in observations])
        parts = [self.node_inputs(o) for o in observations]
        if len({p[0].shape[0] for p in parts}) != 1:
            raise ValueError("observations in one batch must have the same number of nodes")
        feats = np.stack([p[0] for p in parts])
        if net.front_end == "rgcn":
            return GraphBatch(feats, adjacency=np.stack([p[1] for p in parts]))
        return GraphBatch(feats, relations=np.stack([p[1] for p in parts]))


def reference_batch(net: PolicyNet, observations: Sequence[Observation]):
    """Slow path through :func:`observation_graph`; used to cross-check :class:`Batcher`."""
    if not net.is_graph_model:
        return GridBatch(np.stack([o.grid.features for o in observations]))
    graphs = [observation_graph(o, net.rules) for o in observations]
    return net.graph_batch(graphs)

