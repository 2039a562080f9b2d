"""Relational multigraphs, knowledge bases, and the conversions between them.

A :class:`RelationalGraph` is a labeled directed multigraph whose nodes are
dense integers ``0..N-1`` carrying equal-length feature vectors. Edges are
``(source, label, target)`` triples stored as an ``(E, 3)`` integer array with
set semantics: duplicates are dropped silently, first occurrence wins.

A :class:`KnowledgeBase` holds entities, unary and binary predicates and the
ground atoms over them. ``kb_to_graph`` and ``graph_to_kb`` are mutually
inverse on valid inputs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "RelationalGraph",
    "KnowledgeBase",
    "GraphFormatError",
    "KBFormatError",
    "kb_to_graph",
    "graph_to_kb",
    "merge_graphs",
    "serialize_graph",
    "deserialize_graph",
    "serialize_kb",
    "deserialize_kb",
]


class GraphFormatError(ValueError):
    """Raised when a graph document cannot be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class KBFormatError(ValueError):
    """Raised when a knowledge-base document cannot be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _dedupe_edges(edges: np.ndarray) -> np.ndarray:
    if len(edges) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    _, first = np.unique(edges, axis=0, return_index=True)
    return edges[np.sort(first)]


@dataclass(frozen=True, eq=False)
class RelationalGraph:
    node_features: np.ndarray
    relation_labels: tuple[str, ...]
    edges: np.ndarray
    node_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        feats = np.array(self.node_features, dtype=np.float64, copy=True)
        if feats.ndim != 2:
            raise ValueError(f"node_features must be 2-D (N, C), got shape {feats.shape}")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)
        n, n_labels = feats.shape[0], len(self.relation_labels)
        if len(set(self.relation_labels)) != n_labels:
            raise ValueError("relation labels must be unique")
        if len(edges):
            if edges[:, [0, 2]].min() < 0 or edges[:, [0, 2]].max() >= n:
                raise ValueError("edge references a node id outside 0..N-1")
            if edges[:, 1].min() < 0 or edges[:, 1].max() >= n_labels:
                raise ValueError("edge references an unknown relation label")
        edges = _dedupe_edges(edges)
        if self.node_names is not None:
            if len(self.node_names) != n:
                raise ValueError("node_names must have one entry per node")
            object.__setattr__(self, "node_names", tuple(self.node_names))
        feats.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "node_features", feats)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "relation_labels", tuple(self.relation_labels))

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_set(self) -> set[tuple[int, int, int]]:
        return {tuple(int(v) for v in e) for e in self.edges}

    def label_counts(self) -> dict[str, int]:
        counts = np.bincount(self.edges[:, 1], minlength=len(self.relation_labels))
        return {name: int(c) for name, c in zip(self.relation_labels, counts)}

    def with_features(self, features: np.ndarray) -> "RelationalGraph":
        return RelationalGraph(features, self.relation_labels, self.edges, self.node_names)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RelationalGraph):
            return NotImplemented
        return (
            self.relation_labels == other.relation_labels
            and self.node_features.shape == other.node_features.shape
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.edges, other.edges)
            and self.node_names == other.node_names
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class KnowledgeBase:
    """Unary/binary ground atoms over a finite entity set.

    Atoms are canonically ordered by declaration order of their arguments and
    predicates, so two KBs holding the same atom sets compare equal.
    """

    entities: tuple[str, ...]
    unary_predicates: tuple[str, ...]
    binary_predicates: tuple[str, ...]
    unary_atoms: tuple[tuple[str, str], ...] = ()
    binary_atoms: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self) -> None:
        for field_name in ("entities", "unary_predicates", "binary_predicates"):
            values = tuple(getattr(self, field_name))
            if len(set(values)) != len(values):
                raise ValueError(f"duplicate names in {field_name}")
            object.__setattr__(self, field_name, values)
        ent = {e: i for i, e in enumerate(self.entities)}
        up = {p: i for i, p in enumerate(self.unary_predicates)}
        bp = {p: i for i, p in enumerate(self.binary_predicates)}
        unary = set()
        for atom in self.unary_atoms:
            p, e = atom
            if p not in up or e not in ent:
                raise ValueError(f"unary atom {p}({e}) references undeclared names")
            unary.add((p, e))
        binary = set()
        for atom in self.binary_atoms:
            p, a, b = atom
            if p not in bp or a not in ent or b not in ent:
                raise ValueError(f"binary atom {p}({a},{b}) references undeclared names")
            binary.add((p, a, b))
        object.__setattr__(
            self, "unary_atoms", tuple(sorted(unary, key=lambda t: (ent[t[1]], up[t[0]])))
        )
        object.__setattr__(
            self,
            "binary_atoms",
            tuple(sorted(binary, key=lambda t: (ent[t[1]], bp[t[0]], ent[t[2]]))),
        )


def kb_to_graph(kb: KnowledgeBase) -> RelationalGraph:
    """One node per entity, one label per binary predicate, one edge per binary atom."""
    ent = {e: i for i, e in enumerate(kb.entities)}
    up = {p: i for i, p in enumerate(kb.unary_predicates)}
    bp = {p: i for i, p in enumerate(kb.binary_predicates)}
    feats = np.zeros((len(kb.entities), len(kb.unary_predicates)))
    for p, e in kb.unary_atoms:
        feats[ent[e], up[p]] = 1.0
    edges = [(ent[a], bp[p], ent[b]) for p, a, b in kb.binary_atoms]
    return RelationalGraph(feats, kb.binary_predicates, np.array(edges, dtype=np.int64), kb.entities)


def graph_to_kb(
    g: RelationalGraph,
    unary_names: Sequence[str],
    binary_names: Sequence[str] | None = None,
    entity_names: Sequence[str] | None = None,
) -> KnowledgeBase:
    """Inverse of :func:`kb_to_graph`; features must be 0/1 valued."""
    if len(unary_names) != g.feature_dim:
        raise ValueError(
            f"{len(unary_names)} unary names given for feature dimension {g.feature_dim}"
        )
    binary_names = tuple(g.relation_labels if binary_names is None else binary_names)
    if len(binary_names) != len(g.relation_labels):
        raise ValueError(
            f"{len(binary_names)} binary names given for {len(g.relation_labels)} labels"
        )
    bad = (g.node_features != 0.0) & (g.node_features != 1.0)
    if bad.any():
        n, c = np.argwhere(bad)[0]
        raise ValueError(
            f"non-binary feature value {g.node_features[n, c]!r} at node {n}, channel {c}"
        )
    if entity_names is None:
        entity_names = g.node_names or tuple(f"e{i}" for i in range(g.num_nodes))
    entity_names = tuple(entity_names)
    unary = [
        (unary_names[c], entity_names[n]) for n, c in np.argwhere(g.node_features == 1.0)
    ]
    binary = [(binary_names[r], entity_names[a], entity_names[b]) for a, r, b in g.edges]
    return KnowledgeBase(entity_names, tuple(unary_names), binary_names, tuple(unary), tuple(binary))


def merge_graphs(
    base: RelationalGraph,
    extra: RelationalGraph,
    node_mapping: Mapping[int, int] | None = None,
    namespace: str = "kb",
) -> RelationalGraph:
    """Merge ``extra`` into ``base``.

    ``node_mapping`` sends extra node ids onto existing base nodes; unmapped
    extra nodes are appended in order. Extra labels are renamed
    ``f"{namespace}:{label}"`` and never share ids with base labels. The merged
    feature dimension is ``base_dim + extra_dim``; each side gets zeros in the
    other's slots, and several extra nodes mapped onto one base node combine by
    elementwise max.
    """
    node_mapping = dict(node_mapping or {})
    if extra.num_nodes == 0 and not node_mapping:
        return base
    for src, dst in node_mapping.items():
        if not 0 <= src < extra.num_nodes:
            raise ValueError(f"mapping source {src} is not a node of the extra graph")
        if not 0 <= dst < base.num_nodes:
            raise ValueError(f"mapping target {dst} is not a node of the base graph")

    labels = list(base.relation_labels)
    extra_labels = [f"{namespace}:{lab}" for lab in extra.relation_labels]
    clash = set(labels) & set(extra_labels)
    if clash:
        raise ValueError(f"namespaced labels collide with base labels: {sorted(clash)}")
    labels += extra_labels

    new_id = {}
    appended = []
    for i in range(extra.num_nodes):
        if i in node_mapping:
            new_id[i] = node_mapping[i]
        else:
            new_id[i] = base.num_nodes + len(appended)
            appended.append(i)

    c_base, c_extra = base.feature_dim, extra.feature_dim
    feats = np.zeros((base.num_nodes + len(appended), c_base + c_extra))
    feats[: base.num_nodes, :c_base] = base.node_features
    for i in range(extra.num_nodes):
        row = feats[new_id[i], c_base:]
        np.maximum(row, extra.node_features[i], out=row)

    if extra.num_edges:
        remap = np.array([new_id[i] for i in range(extra.num_nodes)], dtype=np.int64)
        moved = np.stack(
            [
                remap[extra.edges[:, 0]],
                extra.edges[:, 1] + len(base.relation_labels),
                remap[extra.edges[:, 2]],
            ],
            axis=1,
        )
        edges = np.concatenate([base.edges, moved])
    else:
        edges = base.edges

    names = None
    if base.node_names is not None or extra.node_names is not None:
        base_names = base.node_names or tuple(str(i) for i in range(base.num_nodes))
        extra_names = extra.node_names or tuple(f"{namespace}{i}" for i in range(extra.num_nodes))
        names = base_names + tuple(extra_names[i] for i in appended)
    return RelationalGraph(feats, tuple(labels), edges, names)


# --------------------------------------------------------------------------
# text formats


def serialize_graph(g: RelationalGraph) -> str:
    lines = [f"nodes {g.num_nodes} labels {len(g.relation_labels)} dim {g.feature_dim}"]
    for row in g.node_features:
        lines.append(" ".join(repr(float(v)) for v in row))
    for s, r, t in g.edges:
        lines.append(f"{s} {r} {t}")
    for i, name in enumerate(g.relation_labels):
        lines.append(f"#label {i} {name}")
    if g.node_names is not None:
        for i, name in enumerate(g.node_names):
            lines.append(f"#node {i} {name}")
    return "\n".join(lines) + "\n"


_HEADER = re.compile(r"^nodes (\d+) labels (\d+) dim (\d+)$")


def deserialize_graph(text: str) -> RelationalGraph:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise GraphFormatError(1, "missing header")
    m = _HEADER.match(lines[0].strip())
    if not m:
        raise GraphFormatError(1, f"bad header {lines[0]!r}")
    n, n_labels, dim = (int(v) for v in m.groups())
    if len(lines) < 1 + n:
        raise GraphFormatError(len(lines) + 1, f"expected {n} feature lines")
    feats = np.zeros((n, dim))
    for i in range(n):
        lineno = i + 2
        parts = lines[1 + i].split()
        if len(parts) != dim:
            raise GraphFormatError(lineno, f"expected {dim} feature values, got {len(parts)}")
        try:
            feats[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise GraphFormatError(lineno, str(exc)) from None
    edges = []
    labels: dict[int, str] = {}
    names: dict[int, str] = {}
    for offset, line in enumerate(lines[1 + n :]):
        lineno = n + 2 + offset
        if line.startswith("#label ") or line.startswith("#node "):
            parts = line.split(" ", 2)
            if len(parts) != 3 or not parts[1].isdigit():
                raise GraphFormatError(lineno, f"bad comment {line!r}")
            (labels if parts[0] == "#label" else names)[int(parts[1])] = parts[2]
            continue
        if line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GraphFormatError(lineno, f"expected 'src label dst', got {line!r}")
        try:
            s, r, t = (int(p) for p in parts)
        except ValueError:
            raise GraphFormatError(lineno, f"non-integer edge field in {line!r}") from None
        if not (0 <= s < n and 0 <= t < n and 0 <= r < n_labels):
            raise GraphFormatError(lineno, f"edge {line!r} out of range")
        edges.append((s, r, t))
    if sorted(labels) != list(range(n_labels)):
        raise GraphFormatError(len(lines), f"expected label names 0..{n_labels - 1}")
    node_names = None
    if names:
        if sorted(names) != list(range(n)):
            raise GraphFormatError(len(lines), f"expected node names 0..{n - 1}")
        node_names = tuple(names[i] for i in range(n))
    return RelationalGraph(
        feats,
        tuple(labels[i] for i in range(n_labels)),
        np.array(edges, dtype=np.int64),
        node_names,
    )


_NAME = re.compile(r"^[A-Za-z0-9_.:\-]+$")
_ATOM = re.compile(r"^([A-Za-z0-9_.:\-]+)\(([^(),\s]+)(?:,([^(),\s]+))?\)$")


def _check_names(names: Iterable[str]) -> None:
    for name in names:
        if not _NAME.match(name):
            raise ValueError(f"name {name!r} is not representable in the KB text format")


def serialize_kb(kb: KnowledgeBase) -> str:
    _check_names(kb.entities)
    _check_names(kb.unary_predicates)
    _check_names(kb.binary_predicates)
    lines = [
        "#entities " + " ".join(kb.entities),
        "#unary " + " ".join(kb.unary_predicates),
        "#binary " + " ".join(kb.binary_predicates),
    ]
    lines += [f"{p}({e})" for p, e in kb.unary_atoms]
    lines += [f"{p}({a},{b})" for p, a, b in kb.binary_atoms]
    return "\n".join(lines) + "\n"


def deserialize_kb(text: str) -> KnowledgeBase:
    decl: dict[str, tuple[str, ...]] = {}
    unary, binary = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, rest = line[1:].partition(" ")
            if key in ("entities", "unary", "binary"):
                decl[key] = tuple(rest.split())
            continue
        m = _ATOM.match(line)
        if not m:
            raise KBFormatError(lineno, f"cannot parse atom {line!r}")
        p, a, b = m.groups()
        if b is None:
            unary.append((lineno, (p, a)))
        else:
            binary.append((lineno, (p, a, b)))
    for key in ("entities", "unary", "binary"):
        if key not in decl:
            raise KBFormatError(1, f"missing #{key} declaration")
    ents, ups, bps = set(decl["entities"]), set(decl["unary"]), set(decl["binary"])
    for lineno, (p, e) in unary:
        if p not in ups or e not in ents:
            raise KBFormatError(lineno, f"undeclared name in {p}({e})")
    for lineno, (p, a, b) in binary:
        if p not in bps or a not in ents or b not in ents:
            raise KBFormatError(lineno, f"undeclared name in {p}({a},{b})")
    return KnowledgeBase(
        decl["entities"],
        decl["unary"],
        decl["binary"],
        tuple(a for _, a in unary),
        tuple(a for _, a in binary),
    )
