import numpy as np
import pytest

from gtg.adapter import Batcher, kb_labels, observation_graph, observation_spec, reference_batch
from gtg.envs import EnvConfig, make_env
from gtg.envs.rtfm import concept_entities
from gtg.grid import RuleSet, count_edges
from gtg.models.policy import ModelConfig, PolicyNet
from gtg.trainer import build_network

CASES = [
    EnvConfig("lava", 7, 7),
    EnvConfig("portal", 7, 7),
    EnvConfig("boxworld", 8, 6),
    EnvConfig("rtfm", 6, 6, variant="onehop"),
    EnvConfig("rtfm", 6, 6, variant="multihop"),
]


def observations(env, n, rng):
    out = []
    obs = env.reset()
    while len(out) < n:
        out.append(obs)
        obs, _, done = env.step(int(rng.integers(4)))
        if done:
            obs = env.reset()
    return out


@pytest.mark.parametrize("front_end", ["rgcn", "nlm"])
@pytest.mark.parametrize("cfg", CASES, ids=lambda c: f"{c.family}-{c.variant}")
def test_fast_batches_equal_reference(cfg, front_end):
    net, env = build_network(ModelConfig(front_end=front_end, hidden=8, mlp_hidden=8), cfg)
    obs = observations(env, 6, np.random.default_rng(0))
    fast, ref = Batcher(net).batch(obs), reference_batch(net, obs)
    np.testing.assert_array_equal(np.broadcast_to(fast.features, ref.features.shape), ref.features)
    if front_end == "rgcn":
        np.testing.assert_allclose(np.broadcast_to(fast.adjacency, ref.adjacency.shape), ref.adjacency, atol=1e-15)
    else:
        np.testing.assert_array_equal(np.broadcast_to(fast.relations, ref.relations.shape), ref.relations)
    np.testing.assert_allclose(net.forward(fast)[0], net.forward(ref)[0], atol=1e-12)


def test_multihop_merge_node_count():
    env = make_env(EnvConfig("rtfm", 6, 6, variant="multihop"))
    g = observation_graph(env.reset(), RuleSet())
    assert g.num_nodes == 36 + len(concept_entities())
    assert len(concept_entities()) == 3 + 8 + 4


def test_onehop_merge_only_adds_kb_labels():
    env = make_env(EnvConfig("rtfm", 6, 6))
    obs = env.reset()
    g = observation_graph(obs, RuleSet())
    assert g.num_nodes == 36
    assert g.relation_labels[-1:] == kb_labels(("beat",))
    counts = g.label_counts()
    assert counts["kb:beat"] == 2
    spatial = count_edges(6, 6)
    assert all(counts[k] == v for k, v in spatial.items())
    # the target monster's cell carries the unary flag
    target = next(e for p, e in obs.kb.unary_atoms if p == "target")
    assert g.node_features[obs.grounding[target], -1] == 1.0


def test_spec_for_graph_and_grid_models():
    env = make_env(EnvConfig("rtfm", 6, 6, variant="multihop"))
    g = observation_spec(env, ModelConfig(front_end="rgcn"))
    c = observation_spec(env, ModelConfig(front_end="cnn"))
    assert g.in_channels == 7 + 5 and c.in_channels == 7
    assert g.labels[-3:] == ("kb:assign", "kb:belong", "kb:beat")


def test_portal_graph_is_rewired():
    env = make_env(EnvConfig("portal", 7, 7, seed=1))
    obs = env.reset()
    (p, q), = obs.portal_pairs
    g = observation_graph(obs, RuleSet.parse("local"))
    edges = g.edge_set()
    px, py = p % 7, p // 7
    qx, qy = q % 7, q // 7
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            nx, ny = px + dx, py + dy
            if (dx, dy) == (0, 0) or not (0 <= nx < 7 and 0 <= ny < 7):
                continue
            if max(abs(nx - qx), abs(ny - qy)) <= 1:
                continue
            n = ny * 7 + nx
            # a neighbour of p now sends its message into q instead
            assert not any(s == n and t == p for s, _, t in edges)
            assert any(s == n and t == q for s, _, t in edges)


def test_mixed_sizes_rejected_for_kb_batches():
    net, _ = build_network(ModelConfig(hidden=4, mlp_hidden=4), EnvConfig("rtfm", 6, 6, variant="multihop"))
    a = make_env(EnvConfig("rtfm", 6, 6, variant="multihop")).reset()
    b = make_env(EnvConfig("rtfm", 5, 5, variant="multihop")).reset()
    with pytest.raises(ValueError):
        Batcher(net).batch([a, b])
