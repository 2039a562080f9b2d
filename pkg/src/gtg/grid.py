"""Grid-to-Graph relation determination rules.

Cells of a ``W x H`` feature map become nodes with id ``y * W + x``. For an
ordered pair of distinct cells ``(a, b)`` each rule whose condition holds adds
the edge ``(a, label, b)``: ``a`` is the source, ``b`` the target, and R-GCN
messages flow from source to target.

Coordinates: ``(0, 0)`` is the top-left cell and ``y`` grows downward. Rule
names follow the coordinate algebra (``topAdj(a, b) <- y_a = y_b + 1``), so
"top" does not mean visually above.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .relgraph import RelationalGraph

LOCAL_LABELS = (
    "rightAdj",
    "leftAdj",
    "topAdj",
    "bottomAdj",
    "topRightAdj",
    "topLeftAdj",
    "bottomRightAdj",
    "bottomLeftAdj",
)
REMOTE_LABELS = ("right", "left", "top", "bottom")
AUX_LABELS = ("aligned", "adjacent")
SELF_LABEL = "self"

# (dx, dy) = (x_a - x_b, y_a - y_b) for each local label
LOCAL_OFFSETS = {
    "rightAdj": (1, 0),
    "leftAdj": (-1, 0),
    "topAdj": (0, 1),
    "bottomAdj": (0, -1),
    "topRightAdj": (1, 1),
    "topLeftAdj": (-1, 1),
    "bottomRightAdj": (1, -1),
    "bottomLeftAdj": (-1, -1),
}


def _condition(label: str, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if label in LOCAL_OFFSETS:
        ox, oy = LOCAL_OFFSETS[label]
        return (dx == ox) & (dy == oy)
    if label == "right":
        return dx > 0
    if label == "left":
        return dx < 0
    if label == "top":
        return dy > 0
    if label == "bottom":
        return dy < 0
    distinct = (dx != 0) | (dy != 0)
    if label == "aligned":
        return ((dx == 0) | (dy == 0)) & distinct
    if label == "adjacent":
        return (np.abs(dx) <= 1) & (np.abs(dy) <= 1) & distinct
    raise KeyError(label)


@dataclass(frozen=True)
class GridObservation:
    """A ``W x H x C`` feature map indexed ``features[x, y, c]``."""

    features: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 3:
            raise ValueError(f"features must be W x H x C, got shape {f.shape}")
        object.__setattr__(self, "features", f)

    @property
    def width(self) -> int:
        return self.features.shape[0]

    @property
    def height(self) -> int:
        return self.features.shape[1]

    @property
    def channels(self) -> int:
        return self.features.shape[2]

    def node_id(self, x: int, y: int) -> int:
        return y * self.width + x

    def node_features(self) -> np.ndarray:
        """Row-major ``(W*H, C)`` view matching node ids."""
        return self.features.transpose(1, 0, 2).reshape(self.width * self.height, self.channels)


@dataclass(frozen=True)
class RuleSet:
    local: bool = True
    remote: bool = True
    aux: bool = True

    @property
    def labels(self) -> tuple[str, ...]:
        out: tuple[str, ...] = ()
        if self.local:
            out += LOCAL_LABELS
        if self.remote:
            out += REMOTE_LABELS
        if self.aux:
            out += AUX_LABELS
        return out

    @classmethod
    def parse(cls, spec: str | Iterable[str]) -> "RuleSet":
        """``"local,remote,aux"`` (any subset, ``"all"`` or ``""``)."""
        parts = spec.split(",") if isinstance(spec, str) else list(spec)
        parts = {p.strip() for p in parts if p.strip()}
        if parts == {"all"}:
            return cls()
        unknown = parts - {"local", "remote", "aux"}
        if unknown:
            raise ValueError(f"unknown rule families: {sorted(unknown)}")
        return cls("local" in parts, "remote" in parts, "aux" in parts)

    def __str__(self) -> str:
        names = [n for n, on in (("local", self.local), ("remote", self.remote), ("aux", self.aux)) if on]
        return ",".join(names)


@lru_cache(maxsize=64)
def grid_edges(width: int, height: int, rules: RuleSet) -> np.ndarray:
    """Edge array for a ``width x height`` grid; depends only on geometry."""
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    ids = np.arange(width * height)
    xs, ys = ids % width, ids // width
    dx = xs[:, None] - xs[None, :]
    dy = ys[:, None] - ys[None, :]
    chunks = []
    for label_id, label in enumerate(rules.labels):
        src, dst = np.nonzero(_condition(label, dx, dy))
        chunks.append(np.stack([src, np.full_like(src, label_id), dst], axis=1))
    edges = np.concatenate(chunks) if chunks else np.zeros((0, 3), dtype=np.int64)
    edges = edges.astype(np.int64)
    edges.setflags(write=False)
    return edges


def build_graph(obs: GridObservation, rules: RuleSet = RuleSet()) -> RelationalGraph:
    return RelationalGraph(
        obs.node_features(), rules.labels, grid_edges(obs.width, obs.height, rules)
    )


def count_edges(width: int, height: int, rules: RuleSet = RuleSet()) -> dict[str, int]:
    """Closed-form per-label edge counts of :func:`build_graph`."""
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    w, h = width, height
    straight_x = (w - 1) * h
    straight_y = w * (h - 1)
    diagonal = (w - 1) * (h - 1)
    table = {
        "rightAdj": straight_x,
        "leftAdj": straight_x,
        "topAdj": straight_y,
        "bottomAdj": straight_y,
        "topRightAdj": diagonal,
        "topLeftAdj": diagonal,
        "bottomRightAdj": diagonal,
        "bottomLeftAdj": diagonal,
        "right": w * (w - 1) // 2 * h * h,
        "left": w * (w - 1) // 2 * h * h,
        "top": h * (h - 1) // 2 * w * w,
        "bottom": h * (h - 1) // 2 * w * w,
        "aligned": w * h * (w - 1 + h - 1),
        "adjacent": 2 * straight_x + 2 * straight_y + 4 * diagonal,
    }
    return {label: table[label] for label in rules.labels}


def family_totals(counts: dict[str, int]) -> dict[str, int]:
    return {
        "local": sum(counts.get(k, 0) for k in LOCAL_LABELS),
        "remote": sum(counts.get(k, 0) for k in REMOTE_LABELS),
        "aligned": counts.get("aligned", 0),
        "adjacent": counts.get("adjacent", 0),
    }


def rewire_portals(
    g: RelationalGraph, portal_pairs: Sequence[tuple[int, int]]
) -> RelationalGraph:
    """Redirect every edge that targets a portal to its partner.

    Edges leaving a portal are kept; duplicates produced by the redirection
    collapse.
    """
    partner: dict[int, int] = {}
    for p, q in portal_pairs:
        for node in (p, q):
            if not 0 <= node < g.num_nodes:
                raise ValueError(f"portal node {node} does not exist")
            if node in partner:
                raise ValueError(f"node {node} appears in more than one portal pair")
        if p == q:
            raise ValueError(f"portal {p} cannot be paired with itself")
        partner[p], partner[q] = q, p
    if not partner:
        return g
    remap = np.arange(g.num_nodes)
    for node, other in partner.items():
        remap[node] = other
    edges = g.edges.copy()
    edges[:, 2] = remap[edges[:, 2]]
    return RelationalGraph(g.node_features, g.relation_labels, edges, g.node_names)
