import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gtg.envs import (
    ACTIONS,
    BlindPolicy,
    BoxState,
    EnvConfig,
    EpisodeLog,
    decode_box_state,
    decode_lava,
    decode_rtfm,
    encode_box_state,
    flood_fill,
    lava_reward,
    make_env,
    oracle_action,
    replay,
    shortest_path,
    solve,
)
from gtg.envs.boxworld import GEM
from gtg.envs.lava import LAVA
from gtg.envs.rtfm import CHANNELS as RTFM_CHANNELS, concept_entities
from gtg.trainer import evaluate

RIGHT, DOWN, LEFT, UP = range(4)


def lava(w=7, h=7, level=1, seed=0, family="lava"):
    return make_env(EnvConfig(family, w, h, level, seed=seed))


def rivers_and_gaps(env):
    out = []
    for kind, c in env.rivers:
        line = env.cells[c, :] if kind == "v" else env.cells[:, c]
        out.append(int((line != LAVA).sum()))
    return out


# --------------------------------------------------------------- generic interface


def test_actions_and_errors():
    assert ACTIONS == ((1, 0), (0, 1), (-1, 0), (0, -1))
    env = lava()
    with pytest.raises(RuntimeError):
        env.step(0)
    env.reset()
    with pytest.raises(ValueError):
        env.step(4)
    with pytest.raises(ValueError):
        make_env(EnvConfig("lava", 4, 4))
    with pytest.raises(ValueError):
        EnvConfig("maze")


def test_reset_with_seed_is_reproducible():
    a, b = lava(seed=1), lava(seed=99)
    oa, ob = a.reset(1234), b.reset(1234)
    np.testing.assert_array_equal(oa.grid.features, ob.grid.features)


def test_episode_stream_is_seeded():
    a, b = lava(seed=5), lava(seed=5)
    for _ in range(3):
        np.testing.assert_array_equal(a.reset().grid.features, b.reset().grid.features)


def test_flood_fill_and_path():
    walls = {(1, 0), (1, 1)}
    reach = flood_fill(3, 3, (0, 0), lambda x, y: (x, y) not in walls)
    assert (2, 0) in reach and (1, 0) not in reach
    path = shortest_path(3, 3, (0, 0), [(2, 0)], lambda x, y: (x, y) not in walls)
    assert len(path) == 6
    assert shortest_path(3, 1, (0, 0), [(2, 0)], lambda x, y: x != 1) is None
    assert flood_fill(3, 1, (0, 0), lambda x, y: x != 1, {(0, 0): (2, 0)}) == {(0, 0)}


# --------------------------------------------------------------- LavaCrossing


def test_level_one_five_by_five():
    env = lava(5, 5, 1, seed=3)
    env.reset()
    assert rivers_and_gaps(env) == [1]
    assert env.solvable()


@pytest.mark.parametrize("level", [1, 2, 3])
def test_levels_are_solvable(level):
    env = lava(9, 9, level, seed=level)
    for _ in range(50):
        env.reset()
        assert len(env.rivers) == level
        assert all(g == 1 for g in rivers_and_gaps(env))
        assert env.solvable()


def test_reward_formula():
    assert lava_reward(10, 100) == pytest.approx(0.91)
    assert lava_reward(0, 100) == 1.0


def test_lava_ends_episode_with_zero():
    env = lava(5, 5, seed=3)
    env.reset()
    kind, c = env.rivers[0]
    # march right (or down) along row/column 0 into the river unless the gap is there
    action = RIGHT if kind == "v" else DOWN
    target = (c, 0) if kind == "v" else (0, c)
    if env.cells[target] != LAVA:
        env.reset()  # gap right at the edge; try the next episode
        kind, c = env.rivers[0]
        action = RIGHT if kind == "v" else DOWN
        target = (c, 0) if kind == "v" else (0, c)
    assert env.cells[target] == LAVA
    for _ in range(c - 1):
        assert env.step(action)[1:] == (0.0, False)
    _, r, done = env.step(action)
    assert (r, done) == (0.0, True)


def test_goal_reward_along_shortest_path():
    env = lava(seed=8)
    env.reset()
    path = shortest_path(env.width, env.height, env.agent, [env.goal], lambda x, y: env.cells[x, y] != LAVA)
    for a in path[:-1]:
        assert env.step(a)[2] is False
    _, r, done = env.step(path[-1])
    assert done and r == pytest.approx(1 - 0.9 * len(path) / env.t_max)


def test_boundary_bump_and_timeout():
    env = make_env(EnvConfig("lava", 5, 5, max_steps=3))
    env.reset()
    for i in range(3):
        obs, r, done = env.step(UP)
        assert env.agent == (0, 0) and r == 0.0
    assert done


def test_lava_encode_decode_round_trip():
    env = lava(seed=2, family="portal")
    env.reset()
    d = decode_lava(env.encode())
    assert d["agent"] == env.agent and d["goal"] == env.goal
    np.testing.assert_array_equal(d["lava"], env.cells == LAVA)
    assert d["portals"] == set(env.portals[0])


def test_empty_cell_all_zero_and_agent_one_hot():
    env = lava(seed=2)
    env.reset()
    f = env.encode()
    assert f[:, :, 0].sum() == 1 and f[0, 0, 0] == 1
    empties = [(x, y) for x in range(7) for y in range(7) if env.cells[x, y] != LAVA and (x, y) not in ((0, 0), env.goal)]
    for x, y in empties:
        assert not f[x, y].any()


def test_portal_lava_needs_portal():
    env = lava(family="portal", seed=1)
    for _ in range(200):
        env.reset()
        assert not env.solvable(use_portals=False)
        assert env.solvable(use_portals=True)


def test_portal_teleports():
    env = lava(family="portal", seed=4)
    env.reset()
    (p, q), = env.portals
    path = shortest_path(7, 7, env.agent, [p], lambda x, y: env.cells[x, y] != LAVA and (x, y) not in (p, q))
    for a in path:
        env.step(a)
    assert env.agent == q
    assert env.observe().portal_pairs == ((env.node_id(*p), env.node_id(*q)),)


def test_random_policy_rarely_uses_portals():
    res = evaluate(None, EnvConfig("portal", 7, 7), 1000, policy=_uniform(np.random.default_rng(0)))
    assert res.win_rate < 0.25


def _uniform(rng):
    return lambda env: int(rng.integers(4))


# --------------------------------------------------------------- Box-World


def box_state(distractor_lock):
    # key k0=0 at (0,0); box1 lock at (3,0) colour 0 containing 1; gem box lock (3,2) colour 1;
    # distractor lock (6,2) colour distractor_lock containing 2
    boxes = frozenset({((3, 0), 0, 1), ((3, 2), 1, GEM), ((6, 2), distractor_lock, 2)})
    return BoxState((0, 3), None, frozenset({((0, 0), 0)}), boxes)


def test_solver_optimal_plan_length_two():
    s = box_state(0)
    plan = solve(s, 8, 4)
    visited = []
    for a in plan:
        from gtg.envs.boxworld import _step

        before = s
        s, r, done = _step(s, a, 8, 4)
        if s.boxes != before.boxes:
            visited.append(next(iter(before.boxes - s.boxes))[0])
    assert done and r == 1.0
    assert visited == [(3, 0), (3, 2)]


def test_distractor_first_is_dead_end():
    from gtg.envs.boxworld import _step

    s = box_state(0)
    # walk to the key, then to the distractor lock at (6, 2)
    for a in [UP, UP, UP]:
        s, _, _ = _step(s, a, 8, 4)
    assert s.held == 0
    path = shortest_path(8, 4, s.agent, [(6, 2)], lambda x, y: (x, y) not in {(2, 0), (3, 0), (2, 2), (3, 2), (5, 2)})
    for a in path:
        s, _, _ = _step(s, a, 8, 4)
    assert s.agent == (6, 2) and s.held is None
    assert solve(s, 8, 4) is None


def test_wrong_key_blocks():
    from gtg.envs.boxworld import _step

    s = BoxState((2, 0), 5, frozenset(), frozenset({((3, 0), 1, GEM)}))
    s2, r, done = _step(s, RIGHT, 8, 4)
    assert s2 == s and not done


def test_generated_boxworld_solvable_and_round_trips():
    env = make_env(EnvConfig("boxworld", 8, 8, seed=0))
    rng = np.random.default_rng(1)
    for _ in range(20):
        env.reset()
        assert solve(env.state, 8, 8) is not None
        assert decode_box_state(env.encode()) == env.state
        for _ in range(30):
            if env.done:
                break
            env.step(int(rng.integers(4)))
            assert decode_box_state(env.encode()) == env.state


def test_boxworld_random_policy_low():
    res = evaluate(None, EnvConfig("boxworld", 8, 8), 1000, policy=_uniform(np.random.default_rng(2)))
    assert res.win_rate < 0.5


def test_boxworld_oracle_wins():
    env = make_env(EnvConfig("boxworld", 8, 8, seed=5))
    for _ in range(20):
        env.reset()
        for a in solve(env.state, 8, 8):
            _, r, done = env.step(a)
        assert done and r == 1.0


# --------------------------------------------------------------- RTFM


def rtfm(variant="onehop", seed=0, size=6):
    return make_env(EnvConfig("rtfm", size, size, variant=variant, seed=seed))


def test_rtfm_channels_hide_semantics():
    assert RTFM_CHANNELS == ("agent", "monster_0", "monster_1", "weapon_0", "weapon_1", "held_0", "held_1")


def test_rtfm_exactly_one_winning_weapon():
    env = rtfm(seed=1)
    for _ in range(100):
        env.reset()
        ep = env.episode
        m = ep.target_monster
        assert sum(ep.weapon_beats(w, m) for w in range(2)) == 1
        assert ep.teams[0] != ep.teams[1] and ep.elements[0] != ep.elements[1]


def test_onehop_kb():
    env = rtfm(seed=2)
    obs = env.reset()
    kb = obs.kb
    assert kb.entities == ("monster_0", "monster_1", "weapon_0", "weapon_1")
    assert len(kb.unary_atoms) == 1 and kb.unary_atoms[0][0] == "target"
    assert len(kb.binary_atoms) == 2  # each weapon beats exactly one monster
    ep = env.episode
    assert obs.grounding["weapon_0"] == env.node_id(*ep.weapons[0])


def test_multihop_kb_census():
    env = rtfm("multihop", seed=3)
    for _ in range(30):
        obs = env.reset()
        kb = obs.kb
        assert len(kb.entities) == 4 + len(concept_entities())
        binary = [a for a in kb.binary_atoms]
        mod_to_weapon = [a for a in binary if a[0] == "assign" and a[2].startswith("weapon")]
        elem_to_monster = [a for a in binary if a[0] == "assign" and a[2].startswith("monster")]
        assert len(mod_to_weapon) == 2 and len(elem_to_monster) == 2
        assert len([a for a in binary if a[0] == "belong"]) == 2
        assert len([a for a in binary if a[0] == "beat"]) >= 1
        assert len([a for a in kb.unary_atoms if a[0] == "target"]) == 1
        assert len([a for a in kb.unary_atoms if a[0] == "hold"]) <= 1


def test_held_weapon_grounds_on_agent():
    env = rtfm(seed=4)
    env.reset()
    ep = env.episode
    ep.held, ep.weapons[0] = 0, None
    kb, ground = env.knowledge_base()
    assert ground["weapon_0"] == env.node_id(*env.agent)
    assert decode_rtfm(env.encode())["held"] == 0


def test_rtfm_encode_decode():
    env = rtfm(seed=5)
    rng = np.random.default_rng(0)
    for _ in range(20):
        env.reset()
        while not env.done:
            d = decode_rtfm(env.encode())
            ep = env.episode
            assert d["agent"] == env.agent and d["monsters"] == ep.monsters
            assert d["weapons"] == ep.weapons and d["held"] == ep.held
            env.step(int(rng.integers(4)))


def test_fight_rules():
    env = rtfm(seed=6)
    env.reset()
    ep = env.episode
    m = ep.target_monster
    ep.held = ep.winning_weapon()
    assert env._fight(m) == (1.0, True)
    assert env._fight(1 - m) == (-1.0, True)
    ep.held = 1 - ep.winning_weapon()
    assert env._fight(m) == (-1.0, True)
    ep.held = None
    assert env._fight(m) == (-1.0, True)


def test_pickup_swaps_weapons():
    env = rtfm(seed=7, size=8)
    env.reset()
    ep = env.episode
    ep.monsters = [(7, 7), (7, 0)]
    ep.weapons = [(1, 0), (2, 0)]
    env.agent = (0, 0)
    env.rng = np.random.default_rng(0)
    env.step(RIGHT)
    assert ep.held == 0 and ep.weapons[0] is None
    env.step(RIGHT)
    # the old weapon is dropped where the new one was picked up
    assert ep.held == 1 and ep.weapons == [(2, 0), None]


def test_oracle_and_blind_rates_small():
    cfg = EnvConfig("rtfm", 6, 6)
    oracle = evaluate(None, cfg, 100, policy=oracle_action)
    blind = evaluate(None, cfg, 200, policy=BlindPolicy(np.random.default_rng(0)))
    assert oracle.win_rate >= 0.97
    assert blind.win_rate < 0.5


# --------------------------------------------------------------- replay


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(["lava", "portal", "boxworld", "rtfm"]), st.integers(0, 10**6))
def test_replay_round_trip(family, seed):
    size = (8, 8) if family != "rtfm" else (6, 6)
    cfg = EnvConfig(family, *size, seed=seed)
    res = evaluate(None, cfg, 2, policy=_uniform(np.random.default_rng(seed)), record=2, seed=seed)
    for log in res.logs:
        back = EpisodeLog.loads(log.dumps())
        assert back.actions == log.actions and back.rewards == log.rewards
        match, got = replay(back, make_env)
        assert match and sum(got) == pytest.approx(sum(log.rewards))


def test_replay_detects_tampering():
    cfg = EnvConfig("lava", 7, 7)
    log = evaluate(None, cfg, 1, policy=lambda env: RIGHT, record=1).logs[0]
    log.rewards[-1] += 1
    assert replay(log, make_env)[0] is False
    with pytest.raises(ValueError):
        EpisodeLog.loads("family lava\nstep x\n")
