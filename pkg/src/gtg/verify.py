"""Oracle suites behind ``gtg verify``.

Each check compares a working implementation with an independent route and
reports the largest disagreement next to its tolerance. Seeds are fixed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .grid import GridObservation, RuleSet, count_edges, family_totals, grid_edges
from .models.policy import ModelConfig, ObservationSpec, PolicyNet
from .models.rgcn import RgcnLayer, block_matrix_oracle, rgcn_conv_equivalence, rgcn_forward
from .relgraph import KnowledgeBase, RelationalGraph, graph_to_kb, kb_to_graph
from .tensornet import finite_diff_report, structure_signature

SUITES = ("conv", "blockmatrix", "grad", "counts", "kbroundtrip")


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance or (self.tolerance == 0 and self.error == 0)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{status}] {self.name}: max error {self.error:.3e} (tolerance {self.tolerance:.0e}){extra}"


# --------------------------------------------------------------------------
# convolution equivalence


def check_conv(samples: int = 100, seed: int = 0, width: int = 5, height: int = 5, channels: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        obs = GridObservation(rng.normal(size=(width, height, channels)))
        kernel = rng.normal(size=(3, 3, channels, int(rng.integers(1, 5))))
        got, ref = rgcn_conv_equivalence(obs, kernel)
        worst = max(worst, float(np.abs(got - ref).max()))
    return CheckResult(f"conv ({samples} random {width}x{height}x{channels} maps)", worst, 1e-10)


# --------------------------------------------------------------------------
# block-matrix message passing


def random_graph(rng: np.random.Generator, max_nodes: int = 8, max_labels: int = 4, dim: int = 3) -> RelationalGraph:
    n = int(rng.integers(1, max_nodes + 1))
    n_labels = int(rng.integers(1, max_labels + 1))
    n_edges = int(rng.integers(0, 3 * n * n_labels + 1))
    edges = np.stack(
        [rng.integers(0, n, n_edges), rng.integers(0, n_labels, n_edges), rng.integers(0, n, n_edges)], axis=1
    ) if n_edges else np.zeros((0, 3), dtype=np.int64)
    labels = tuple(f"r{i}" for i in range(n_labels))
    return RelationalGraph(rng.normal(size=(n, dim)), labels, edges)


def check_blockmatrix(samples: int = 100, seed: int = 1, max_nodes: int = 8) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        g = random_graph(rng, max_nodes)
        layer = RgcnLayer.init(rng, g.relation_labels, g.feature_dim, int(rng.integers(1, 5)))
        layer.weight[...] = rng.normal(size=layer.weight.shape)
        layer.self_weight[...] = rng.normal(size=layer.self_weight.shape)
        got = rgcn_forward(layer, g, activation=False)
        ref = block_matrix_oracle(layer, g)
        worst = max(worst, float(np.abs(got - ref).max()))
    return CheckResult(f"blockmatrix ({samples} random graphs, N <= {max_nodes})", worst, 1e-12)


# --------------------------------------------------------------------------
# gradients


def _jitter_biases(net: PolicyNet, rng: np.random.Generator, scale: float = 0.1) -> None:
    """Small nonzero biases keep ReLUs off their kink at exactly zero.

    Weights keep their Glorot initialisation so logits stay O(1); saturated
    softmaxes give gradients near 1e-9, where float64 round-off in the
    finite differences dominates any relative-error measure.
    """
    for name, p in net.parameters().items():
        if name.endswith("bias"):
            p[...] = rng.normal(scale=scale, size=p.shape)


GRAD_MODELS = {
    "rgcn": dict(front_end="rgcn"),
    "nlm": dict(front_end="nlm"),
    "cnn": dict(front_end="cnn"),
    "cnn_maxpool": dict(front_end="cnn", cnn_pool="maxpool"),
    "cnn_wide": dict(front_end="cnn_wide"),
}


def gradient_instance(kind: str, rng: np.random.Generator, grid: int = 3, channels: int = 3, actions: int = 4):
    """A tiny network with random parameters and a random A2C minibatch on ``grid x grid`` inputs."""
    cfg = ModelConfig(
        hidden=4,
        layers=2,
        mlp_hidden=5,
        mlp_layers=2,
        cnn_features=3,
        cnn_wide_features=4,
        nlm_nullary=2,
        seed=int(rng.integers(1 << 30)),
        **GRAD_MODELS[kind],
    )
    spec = ObservationSpec(channels, actions, RuleSet().labels, (grid, grid))
    net = PolicyNet(cfg, spec)
    _jitter_biases(net, rng)
    b = 3
    grids = [GridObservation(rng.normal(size=(grid, grid, channels))) for _ in range(b)]
    batch = net.grid_batch(grids)
    acts = rng.integers(0, actions, b)
    rets = rng.normal(size=b)
    adv = rng.normal(size=b)
    return net, batch, acts, rets, adv


def check_gradients(
    instances: int = 20, seed: int = 2, kinds=tuple(GRAD_MODELS), max_coords: int | None = 12
) -> list[CheckResult]:
    """Full A2C loss (policy, value and entropy terms) of every front end against finite differences."""
    from .trainer import TrainConfig, a2c_loss

    cfg = TrainConfig(value_coef=0.5, entropy_coef=0.1)
    rng = np.random.default_rng(seed)
    out = []
    for kind in kinds:
        worst = 0.0
        checked = skipped = 0
        for _ in range(instances):
            net, batch, acts, rets, adv = gradient_instance(kind, rng)
            _, grads = a2c_loss(net, batch, acts, rets, adv, cfg)

            def f():
                total = a2c_loss(net, batch, acts, rets, adv, cfg)[0].total
                return total, structure_signature(net.forward(batch)[2])

            rep = finite_diff_report(f, net.parameters(), grads, max_coords=max_coords, rng=rng)
            worst = max(worst, rep.max_rel_error)
            checked += rep.coords_checked
            skipped += rep.coords_skipped
        out.append(
            CheckResult(
                f"grad {kind} ({instances} instances, policy+value+entropy loss)",
                worst,
                1e-5,
                f"{checked} coordinates, {skipped} skipped at kinks",
            )
        )
    return out


# --------------------------------------------------------------------------
# edge census

# independent statement of every rule as (dx, dy) -> bool, with dx = x_a - x_b
_BRUTE_RULES = {
    "rightAdj": lambda dx, dy: (dx, dy) == (1, 0),
    "leftAdj": lambda dx, dy: (dx, dy) == (-1, 0),
    "topAdj": lambda dx, dy: (dx, dy) == (0, 1),
    "bottomAdj": lambda dx, dy: (dx, dy) == (0, -1),
    "topRightAdj": lambda dx, dy: (dx, dy) == (1, 1),
    "topLeftAdj": lambda dx, dy: (dx, dy) == (-1, 1),
    "bottomRightAdj": lambda dx, dy: (dx, dy) == (1, -1),
    "bottomLeftAdj": lambda dx, dy: (dx, dy) == (-1, -1),
    "right": lambda dx, dy: dx > 0,
    "left": lambda dx, dy: dx < 0,
    "top": lambda dx, dy: dy > 0,
    "bottom": lambda dx, dy: dy < 0,
    "aligned": lambda dx, dy: dx == 0 or dy == 0,
    "adjacent": lambda dx, dy: max(abs(dx), abs(dy)) <= 1,
}


def brute_force_counts(width: int, height: int) -> dict[str, int]:
    """Enumerate every ordered pair of distinct cells and test each rule."""
    cells = [(x, y) for y in range(height) for x in range(width)]
    counts = dict.fromkeys(_BRUTE_RULES, 0)
    for (xa, ya), (xb, yb) in itertools.permutations(cells, 2):
        for label, rule in _BRUTE_RULES.items():
            if rule(xa - xb, ya - yb):
                counts[label] += 1
    return counts


def check_counts(max_size: int = 12) -> tuple[list[CheckResult], dict[str, int]]:
    rules = RuleSet()
    mismatches = 0
    checked = 0
    for w in range(1, max_size + 1):
        for h in range(1, max_size + 1):
            brute = brute_force_counts(w, h)
            closed = count_edges(w, h, rules)
            built = RelationalGraph(np.zeros((w * h, 0)), rules.labels, grid_edges(w, h, rules)).label_counts()
            checked += 1
            if not (brute == closed == built):
                mismatches += 1
    totals = family_totals(count_edges(10, 10, rules))
    expected = {"local": 684, "remote": 18000, "aligned": 1800, "adjacent": 684}
    off = sum(abs(totals[k] - v) for k, v in expected.items())
    res = [
        CheckResult(f"counts (brute force vs closed form vs built graph, {checked} grids)", float(mismatches), 0.0),
        CheckResult("counts 10x10 families", float(off), 0.0, " ".join(f"{k}={v}" for k, v in totals.items())),
    ]
    return res, totals


def growth_ratios(small: int = 8, large: int = 16) -> dict[str, tuple[float, float]]:
    """Observed edge-count ratio between ``large^2`` and ``small^2`` grids vs the asymptotic order."""
    rules = RuleSet()
    a = family_totals(count_edges(small, small, rules))
    b = family_totals(count_edges(large, large, rules))
    n_ratio = (large * large) / (small * small)
    order = {"local": 1.0, "remote": 2.0, "aligned": 1.5, "adjacent": 1.0}
    return {k: (b[k] / a[k], n_ratio ** order[k]) for k in order}


# --------------------------------------------------------------------------
# KB round trip


def random_kb(rng: np.random.Generator) -> KnowledgeBase:
    n_e = int(rng.integers(1, 9))
    n_u = int(rng.integers(0, 4))
    n_b = int(rng.integers(0, 4))
    ents = tuple(f"e{i}" for i in range(n_e))
    up = tuple(f"u{i}" for i in range(n_u))
    bp = tuple(f"b{i}" for i in range(n_b))
    unary = [(p, e) for p in up for e in ents if rng.random() < 0.4]
    binary = [(p, a, b) for p in bp for a in ents for b in ents if rng.random() < 0.2]
    return KnowledgeBase(ents, up, bp, tuple(unary), tuple(binary))


def check_kb_roundtrip(samples: int = 100, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(samples):
        kb = random_kb(rng)
        g = kb_to_graph(kb)
        back = graph_to_kb(g, kb.unary_predicates, kb.binary_predicates, kb.entities)
        if back != kb or kb_to_graph(back) != g:
            failures += 1
    return CheckResult(f"kbroundtrip ({samples} random KBs)", float(failures), 0.0)


# --------------------------------------------------------------------------
# permutation invariance (used by the acceptance suite)


def permute_graph(g: RelationalGraph, perm: np.ndarray) -> RelationalGraph:
    """Relabel node ``i`` as ``perm[i]``."""
    inv = np.argsort(perm)
    feats = g.node_features[inv]
    edges = g.edges.copy()
    edges[:, 0] = perm[edges[:, 0]]
    edges[:, 2] = perm[edges[:, 2]]
    return RelationalGraph(feats, g.relation_labels, edges)


def run_suite(name: str) -> list[CheckResult]:
    if name == "conv":
        return [check_conv()]
    if name == "blockmatrix":
        return [check_blockmatrix()]
    if name == "grad":
        return check_gradients(instances=4)
    if name == "counts":
        return check_counts()[0]
    if name == "kbroundtrip":
        return [check_kb_roundtrip()]
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
