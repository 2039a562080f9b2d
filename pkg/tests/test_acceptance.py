"""End-to-end acceptance checks, one test per criterion.

Each test records a ``[PASS]``/``[FAIL] criterion N: ...`` line that is
printed in the pytest terminal summary. The training criteria share one
module-scoped fixture (about half an hour of CPU time in total).
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gtg.cli import main
from gtg.envs import EnvConfig, make_env
from gtg.envs.rtfm import BlindPolicy, oracle_action
from gtg.grid import GridObservation, RuleSet, build_graph
from gtg.models.policy import ModelConfig, ObservationSpec, PolicyNet, policy_forward
from gtg.trainer import TrainConfig, bandit_smoke, evaluate, train
from gtg.verify import (
    check_blockmatrix,
    check_conv,
    check_counts,
    check_gradients,
    check_kb_roundtrip,
    growth_ratios,
    permute_graph,
)

pytestmark = pytest.mark.acceptance


def record(n: int, ok: bool, text: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t


def test_criterion_1_conv_equivalence():
    res, secs = timed(check_conv, samples=100)
    ok = res.error < 1e-10 and secs < 5
    record(1, ok, f"local R-GCN vs 3x3 conv, 100 maps, max diff {res.error:.2e} (< 1e-10), {secs:.2f}s (< 5s)")
    assert ok


def test_criterion_2_block_matrix():
    res, secs = timed(check_blockmatrix, samples=100, max_nodes=8)
    ok = res.error < 1e-12 and secs < 5
    record(2, ok, f"message passing vs dense block matrix, 100 graphs, max diff {res.error:.2e} (< 1e-12), {secs:.2f}s (< 5s)")
    assert ok


def test_criterion_3_gradients():
    results, secs = timed(check_gradients, instances=20)
    worst = max(r.error for r in results)
    ok = all(r.error < 1e-5 for r in results) and secs < 60
    kinds = ", ".join(f"{r.name.split()[1]} {r.error:.1e}" for r in results)
    record(3, ok, f"finite differences, 20 instances per model ({kinds}), worst {worst:.2e} (< 1e-5), {secs:.1f}s (< 60s)")
    assert ok


def test_criterion_4_edge_census():
    t = time.perf_counter()
    results, totals = check_counts(max_size=12)
    ratios = growth_ratios(8, 16)
    secs = time.perf_counter() - t
    exact = all(r.passed for r in results)
    expected = {"local": 684, "remote": 18000, "aligned": 1800, "adjacent": 684}
    # observed growth exponent log(ratio) / log(N ratio) against the asymptotic order
    n_ratio = 4.0
    exponents = {k: (np.log(o) / np.log(n_ratio), np.log(p) / np.log(n_ratio)) for k, (o, p) in ratios.items()}
    growth_ok = all(abs(e - order) < 0.1 for e, order in exponents.values())
    ok = exact and totals == expected and growth_ok and secs < 10
    growth = " ".join(f"{k} x{ratios[k][0]:.2f} N^{e:.2f}/N^{o:g}" for k, (e, o) in exponents.items())
    record(4, ok, f"144 grids exact, 10x10 {totals}, 8->16 growth {growth} (exponent within 0.1), {secs:.2f}s (< 10s)")
    assert ok


def test_criterion_5_permutation_invariance():
    rng = np.random.default_rng(5)
    worst = 0.0
    for front_end in ("rgcn", "nlm"):
        cfg = ModelConfig(front_end=front_end, hidden=6, mlp_hidden=12, seed=3)
        net = PolicyNet(cfg, ObservationSpec(3, 4, RuleSet().labels, (4, 4)))
        g = build_graph(GridObservation(rng.normal(size=(4, 4, 3))))
        logits, value = policy_forward(net, g)
        for _ in range(50):
            pl, pv = policy_forward(net, permute_graph(g, rng.permutation(g.num_nodes)))
            worst = max(worst, float(np.abs(pl - logits).max()), abs(pv - value))
    ok = worst < 1e-9
    record(5, ok, f"R-GCN and NLM logits/value under 50 node permutations each, max diff {worst:.2e} (< 1e-9)")
    assert ok


def test_criterion_6_kb_round_trip():
    res = check_kb_roundtrip(samples=100)
    ok = res.error == 0
    record(6, ok, f"graph_to_kb(kb_to_graph(kb)) == kb on 100 random KBs, {int(res.error)} failures")
    assert ok


def test_criterion_7_environment_statistics():
    t = time.perf_counter()
    cfg = EnvConfig("rtfm", 6, 6)
    blind = evaluate(None, cfg, 1000, policy=BlindPolicy(np.random.default_rng(7)))
    oracle = evaluate(None, cfg, 500, policy=oracle_action, seed=777)
    env = make_env(EnvConfig("portal", 7, 7, seed=7))
    blocked = 0
    for _ in range(200):
        env.reset()
        blocked += (not env.solvable(use_portals=False)) and env.solvable(use_portals=True)
    secs = time.perf_counter() - t
    ok = blind.win_rate < 0.5 and oracle.win_rate >= 0.99 and blocked == 200 and secs < 120
    record(
        7,
        ok,
        f"RTFM 6x6 blind win {blind.win_rate:.3f} (< 0.5, 1000 ep), oracle win {oracle.win_rate:.3f} "
        f"(>= 0.99, 500 ep), portal maps needing a portal {blocked}/200, {secs:.1f}s (< 120s)",
    )
    assert ok


# ---------------------------------------------------------------- training

LAVA = EnvConfig("lava", 7, 7, 1)
PORTAL = EnvConfig("portal", 7, 7, 1)
STEPS = 300_000


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = {}
    for front_end in ("rgcn", "cnn"):
        run_dir = tmp_path_factory.mktemp(f"accept_{front_end}")
        t = time.perf_counter()
        result = train(ModelConfig(front_end=front_end), LAVA, TrainConfig(total_steps=STEPS), run_dir)
        out[front_end] = (result, time.perf_counter() - t)
    return out


def test_criterion_8_desk_scale_training(trained):
    result, secs = trained["rgcn"]
    ev = evaluate(result.net, LAVA, 200, "greedy")
    bandits = {}
    for front_end in ("rgcn", "nlm", "cnn"):
        res, b_secs = timed(bandit_smoke, front_end)
        bandits[front_end] = (res.converged and b_secs < 60, b_secs, res.updates)
    ok = result.env_steps <= STEPS and ev.mean_return >= 0.80 and secs <= 45 * 60 and all(b[0] for b in bandits.values())
    bandit_txt = ", ".join(f"{k} {'ok' if v[0] else 'FAILED'} in {v[2]} updates/{v[1]:.2f}s" for k, v in bandits.items())
    record(
        8,
        ok,
        f"R-GCN on lava 7x7 L1 after {result.env_steps} steps: greedy return {ev.mean_return:.3f} (>= 0.80, 200 ep), "
        f"win {ev.win_rate:.3f}, trained in {secs / 60:.1f} min (<= 45); bandits: {bandit_txt}",
    )
    assert ok


def test_criterion_9_portal_transfer(trained):
    rgcn, cnn = trained["rgcn"][0].net, trained["cnn"][0].net
    # same episode seeds and the same per-episode action streams for both agents
    ours = evaluate(rgcn, PORTAL, 200, "sample")
    blind = evaluate(cnn, PORTAL, 200, "sample")
    ok = ours.win_rate > blind.win_rate
    record(
        9,
        ok,
        f"lava-trained agents on portal lava 7x7 (200 sampled ep, shared seeds): "
        f"R-GCN with rewired graphs {ours.win_rate:.3f} vs CNN {blind.win_rate:.3f} (strictly greater)",
    )
    assert ok


def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "det.cfg"
    cfg.write_text("env.family = lava\nenv.width = 7\nenv.height = 7\ntrain.total_steps = 3200\ntrain.log_every = 4\nseed = 11\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", str(cfg), "--quiet", "--run-dir", str(a)]) == 0
    assert main(["train", str(cfg), "--quiet", "--run-dir", str(b)]) == 0
    da, db = (a / "metrics.csv").read_bytes(), (b / "metrics.csv").read_bytes()
    rows = da.count(b"\n") - 1
    ok = da == db and rows > 0
    record(10, ok, f"two cmd_train runs, same config and seed: metrics.csv byte-identical ({len(da)} bytes, {rows} rows)")
    assert ok
