"""Synchronous n-step advantage actor-critic, evaluation and transfer harness.

Per update, ``workers`` environments are stepped ``rollout`` times in lockstep
with the current parameters, then

    R_t = r_t + gamma * R_{t+1} * (1 - done_t),   R_n = V(s_n)
    A_t = R_t - V(s_t)
    loss = mean(-A_t log pi(a_t | s_t)) + c_v mean((V(s_t) - R_t)^2) - c_e mean(H(pi(. | s_t)))

followed by gradient-norm clipping and one RMSprop step. Everything runs in
one process; worker environments are stepped in index order, so a run is
reproducible from its seed and configuration.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adapter import Batcher, observation_graph, observation_spec
from .envs import EnvConfig, EpisodeLog, GridEnv, make_env
from .envs.base import MAX_SEED
from .models.policy import ModelConfig, PolicyNet
from .tensornet import RmspropState, clip_grad_norm, load_checkpoint, log_softmax, rmsprop_step, save_checkpoint

METRIC_COLUMNS = (
    "env_steps",
    "updates",
    "mean_return",
    "win_rate",
    "policy_loss",
    "value_loss",
    "entropy",
    "wall_clock_s",
)


class NonFiniteLossError(FloatingPointError):
    pass


class IncompatibleModelError(ValueError):
    pass


@dataclass
class TrainConfig:
    total_steps: int = 300_000
    rollout: int = 20
    workers: int = 8
    gamma: float = 0.99
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 0.001
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    max_grad_norm: float = 40.0
    log_every: int = 10  # updates per metrics row
    checkpoint_every: int = 0  # updates; 0 keeps only the final checkpoint
    final_eval_episodes: int = 0  # greedy evaluation after training; 0 skips it
    seed: int = 0
    log_wall_clock: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("value_coef", "entropy_coef", "lr", "max_grad_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("total_steps", "rollout", "workers", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


# --------------------------------------------------------------------------
# returns and loss


def compute_returns(rewards, dones, bootstrap, gamma: float, values=None):
    """n-step returns (and advantages when ``values`` is given).

    Arrays are ``(T, ...)``; ``bootstrap`` has the trailing shape.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape != dones.shape:
        raise ValueError("rewards and dones must have the same shape")
    running = np.broadcast_to(np.asarray(bootstrap, dtype=np.float64), rewards.shape[1:]).copy()
    returns = np.empty_like(rewards)
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = rewards[t] + gamma * running * (1.0 - dones[t])
        returns[t] = running
    if values is None:
        return returns
    values = np.asarray(values, dtype=np.float64)
    if values.shape != returns.shape:
        raise ValueError("values must align with rewards")
    return returns, returns - values


@dataclass
class LossStats:
    policy_loss: float
    value_loss: float
    entropy: float
    total: float
    grad_norm: float = 0.0


def a2c_loss(net: PolicyNet, batch, actions, returns, advantages, cfg: TrainConfig):
    """Loss components and parameter gradients for one batch."""
    logits, values, cache = net.forward(batch)
    b = logits.shape[0]
    logp = log_softmax(logits)
    p = np.exp(logp)
    rows = np.arange(b)
    actions = np.asarray(actions, dtype=np.int64)
    returns = np.asarray(returns, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)

    policy_loss = float(-(advantages * logp[rows, actions]).mean())
    value_loss = float(((values - returns) ** 2).mean())
    ent_each = -(p * logp).sum(axis=1)
    entropy = float(ent_each.mean())
    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    if not math.isfinite(total):
        raise NonFiniteLossError(f"non-finite loss {total}")

    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    dlogits = advantages[:, None] * (p - onehot) / b
    dlogits += cfg.entropy_coef * p * (logp + ent_each[:, None]) / b
    dvalues = cfg.value_coef * 2.0 * (values - returns) / b
    grads = net.backward(cache, dlogits, dvalues)
    return LossStats(policy_loss, value_loss, entropy, total), grads


def a2c_update(
    net: PolicyNet,
    opt: RmspropState,
    batch,
    actions,
    returns,
    advantages,
    cfg: TrainConfig,
    diagnostic_path: Path | None = None,
) -> LossStats:
    """One optimiser step; on a non-finite loss or gradient the state is dumped and the error re-raised."""
    try:
        stats, grads = a2c_loss(net, batch, actions, returns, advantages, cfg)
        if not all(np.isfinite(g).all() for g in grads.values()):
            raise NonFiniteLossError("non-finite gradient")
    except (NonFiniteLossError, ValueError) as exc:
        if diagnostic_path is not None:
            save_checkpoint(diagnostic_path, net.parameters())
        if isinstance(exc, NonFiniteLossError):
            raise
        raise NonFiniteLossError(str(exc)) from exc
    stats.grad_norm = clip_grad_norm(grads, cfg.max_grad_norm)
    rmsprop_step(net.parameters(), grads, opt)
    return stats


# --------------------------------------------------------------------------
# acting


def sample_actions(logits: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling with one uniform draw per row."""
    p = np.exp(log_softmax(logits))
    cdf = np.cumsum(p, axis=1)
    a = (cdf < uniforms[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(a, logits.shape[1] - 1)


def greedy_actions(logits: np.ndarray) -> np.ndarray:
    """Highest logit; ties go to the lowest action index."""
    return np.argmax(logits, axis=1)


def build_network(model_cfg: ModelConfig, env_cfg: EnvConfig) -> tuple[PolicyNet, GridEnv]:
    env = make_env(env_cfg)
    net = PolicyNet(model_cfg, observation_spec(env, model_cfg))
    return net, env


def edge_census(net: PolicyNet, env: GridEnv) -> dict[str, int]:
    """Per-label edge counts of the graph the network sees for a fresh episode."""
    obs = env.reset(0)
    g = observation_graph(obs, net.rules)
    return g.label_counts()


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    mean_return: float
    win_rate: float
    return_se: float
    win_se: float
    episodes: int
    returns: list[float] = field(default_factory=list)
    logs: list[EpisodeLog] = field(default_factory=list)


def _summarise(returns: Sequence[float], wins: Sequence[bool]) -> EvalResult:
    r = np.asarray(returns, dtype=np.float64)
    w = np.asarray(wins, dtype=np.float64)
    n = len(r)
    se = lambda x: float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EvalResult(float(r.mean()), float(w.mean()), se(r), se(w), n, r.tolist())


def episode_seeds(seed: int, episodes: int) -> list[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(MAX_SEED, size=episodes)]


def evaluate(
    net: PolicyNet | None,
    env_cfg: EnvConfig,
    episodes: int = 200,
    mode: str = "greedy",
    seed: int = 12345,
    policy: Callable[[GridEnv], int] | None = None,
    lanes: int = 20,
    record: int = 0,
) -> EvalResult:
    """Mean return and success rate over ``episodes`` seeded episodes.

    Episode ``i`` always uses the same environment seed and (in sample mode)
    its own action stream, so results do not depend on ``lanes``. ``policy``
    replaces the network with a scripted ``env -> action`` function. The
    first ``record`` episodes are returned as replayable logs.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError("mode must be 'greedy' or 'sample'")
    if net is None and policy is None:
        raise ValueError("need a network or a policy")
    seeds = episode_seeds(seed, episodes)
    batcher = Batcher(net) if net is not None else None
    if net is not None and not net.size_agnostic and net.spec.grid_size != (env_cfg.width, env_cfg.height):
        raise IncompatibleModelError(
            f"{net.front_end} network with a flattening head was built for {net.spec.grid_size}, "
            f"not {(env_cfg.width, env_cfg.height)}"
        )
    returns = [0.0] * episodes
    wins = [False] * episodes
    logs = {i: EpisodeLog(env_cfg, seeds[i]) for i in range(min(record, episodes))}
    for start in range(0, episodes, lanes):
        ids = list(range(start, min(start + lanes, episodes)))
        envs = {i: make_env(env_cfg) for i in ids}
        action_rngs = {i: np.random.default_rng([seeds[i], 1]) for i in ids}
        obs = {i: envs[i].reset(seeds[i]) for i in ids}
        active = list(ids)
        while active:
            if policy is not None:
                acts = {i: policy(envs[i]) for i in active}
            else:
                logits, _, _ = net.forward(batcher.batch([obs[i] for i in active]))
                if mode == "greedy":
                    chosen = greedy_actions(logits)
                else:
                    u = np.array([action_rngs[i].random() for i in active])
                    chosen = sample_actions(logits, u)
                acts = dict(zip(active, (int(a) for a in chosen)))
            still = []
            for i in active:
                o, r, done = envs[i].step(acts[i])
                returns[i] += r
                if i in logs:
                    logs[i].actions.append(acts[i])
                    logs[i].rewards.append(r)
                obs[i] = o
                if done:
                    wins[i] = r > 0
                else:
                    still.append(i)
            active = still
    result = _summarise(returns, wins)
    result.logs = [logs[i] for i in sorted(logs)]
    return result


# --------------------------------------------------------------------------
# transfer harness


def format_change(value: float, baseline: float) -> str:
    """``0.790(-17.5%)`` style cell."""
    if baseline == 0:
        return f"{value:.3f}(n/a)"
    pct = (value - baseline) / abs(baseline) * 100.0
    return f"{value:.3f}({pct:+.1f}%)"


def ood_harness(
    net: PolicyNet,
    train_cfg: EnvConfig,
    test_cfgs: Sequence[tuple[str, EnvConfig]],
    episodes: int = 200,
    mode: str = "greedy",
    seed: int = 12345,
):
    """Evaluate the training configuration and every test configuration.

    Returns rows of ``(name, mean_return, win_rate, change_pct, cell)`` where
    the change is relative to the training configuration's mean return.
    """
    for name, cfg in test_cfgs:
        if not net.size_agnostic and (cfg.width, cfg.height) != (train_cfg.width, train_cfg.height):
            raise IncompatibleModelError(
                f"{name}: the flattening CNN cannot transfer across grid sizes; use cnn.pool=maxpool"
            )
    base = evaluate(net, train_cfg, episodes, mode, seed)
    rows = [("train", train_cfg, base, 0.0 if base.mean_return else None)]
    for name, cfg in test_cfgs:
        res = evaluate(net, cfg, episodes, mode, seed)
        pct = None if base.mean_return == 0 else (res.mean_return - base.mean_return) / abs(base.mean_return) * 100
        rows.append((name, cfg, res, pct))
    return [
        {
            "name": name,
            "family": cfg.family,
            "width": cfg.width,
            "height": cfg.height,
            "level": cfg.level,
            "mean_return": res.mean_return,
            "return_se": res.return_se,
            "win_rate": res.win_rate,
            "change_pct": pct,
            "cell": format_change(res.mean_return, base.mean_return),
        }
        for name, cfg, res, pct in rows
    ]


def ood_table_text(rows) -> str:
    head = f"{'config':<10} {'family':<9} {'size':<7} {'level':>5} {'return':>8} {'win':>6}  cell"
    lines = [head]
    for r in rows:
        size = f"{r['width']}x{r['height']}"
        lines.append(
            f"{r['name']:<10} {r['family']:<9} {size:<7} {r['level']:>5} "
            f"{r['mean_return']:>8.3f} {r['win_rate']:>6.3f}  {r['cell']}"
        )
    return "\n".join(lines)


def ood_table_csv(rows) -> str:
    out = io.StringIO()
    cols = ["name", "family", "width", "height", "level", "mean_return", "return_se", "win_rate", "change_pct"]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
    return out.getvalue()


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    net: PolicyNet
    env_steps: int
    updates: int
    checkpoint: Path | None
    metrics_path: Path | None


class MetricsWriter:
    def __init__(self, path: Path | None, log_wall_clock: bool):
        self.path = path
        self.log_wall_clock = log_wall_clock
        self.rows: list[dict] = []
        if path is not None:
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(METRIC_COLUMNS)

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self.path is None:
            return
        values = []
        for col in METRIC_COLUMNS:
            v = row.get(col)
            if col == "wall_clock_s" and not self.log_wall_clock:
                v = None
            values.append("" if v is None else (repr(float(v)) if isinstance(v, float) else v))
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(values)


def worker_seeds(seed: int, workers: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1, np.uint64)[0] % MAX_SEED) for child in ss.spawn(workers)]


def train(
    model_cfg: ModelConfig,
    env_cfg: EnvConfig,
    cfg: TrainConfig,
    run_dir: str | Path | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run A2C for ``cfg.total_steps`` environment steps."""
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    say = log or (lambda s: None)
    envs = [make_env(env_cfg.with_(seed=s)) for s in worker_seeds(cfg.seed, cfg.workers)]
    net = PolicyNet(model_cfg, observation_spec(envs[0], model_cfg))
    batcher = Batcher(net)
    opt = RmspropState(lr=cfg.lr, alpha=cfg.rms_alpha, eps=cfg.rms_eps)
    act_rng = np.random.default_rng([cfg.seed, 2])
    say(f"parameters {net.num_parameters()}")

    ckpt_dir = None
    metrics = MetricsWriter(run_dir / "metrics.csv" if run_dir else None, cfg.log_wall_clock)
    timing_path = None
    if run_dir is not None:
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        timing_path = run_dir / "timing.csv"
        timing_path.write_text("updates,wall_clock_s\n")

    obs = [e.reset() for e in envs]
    ep_return = np.zeros(cfg.workers)
    finished_returns: list[float] = []
    finished_wins: list[bool] = []
    window = {"policy_loss": [], "value_loss": [], "entropy": []}
    steps = updates = 0
    t0 = time.perf_counter()
    last_ckpt = None
    while steps < cfg.total_steps:
        traj_obs, traj_act, traj_rew, traj_done, traj_val = [], [], [], [], []
        for _ in range(cfg.rollout):
            logits, values, _ = net.forward(batcher.batch(obs))
            actions = sample_actions(logits, act_rng.random(cfg.workers))
            traj_obs.extend(obs)
            traj_act.append(actions)
            traj_val.append(values)
            rewards = np.zeros(cfg.workers)
            dones = np.zeros(cfg.workers)
            for w, env in enumerate(envs):
                o, r, d = env.step(int(actions[w]))
                rewards[w], dones[w] = r, d
                ep_return[w] += r
                if d:
                    finished_returns.append(float(ep_return[w]))
                    finished_wins.append(r > 0)
                    ep_return[w] = 0.0
                    o = env.reset()
                obs[w] = o
            traj_rew.append(rewards)
            traj_done.append(dones)
            steps += cfg.workers
        _, bootstrap, _ = net.forward(batcher.batch(obs))
        returns, adv = compute_returns(traj_rew, traj_done, bootstrap, cfg.gamma, np.array(traj_val))
        diag = ckpt_dir / "diagnostic_nonfinite.gtgc" if ckpt_dir else None
        stats = a2c_update(
            net,
            opt,
            batcher.batch(traj_obs),
            np.concatenate(traj_act),
            returns.reshape(-1),
            adv.reshape(-1),
            cfg,
            diag,
        )
        updates += 1
        for k in window:
            window[k].append(getattr(stats, k))
        if updates % cfg.log_every == 0 or steps >= cfg.total_steps:
            elapsed = time.perf_counter() - t0
            row = {
                "env_steps": steps,
                "updates": updates,
                "mean_return": float(np.mean(finished_returns)) if finished_returns else None,
                "win_rate": float(np.mean(finished_wins)) if finished_wins else None,
                "policy_loss": float(np.mean(window["policy_loss"])),
                "value_loss": float(np.mean(window["value_loss"])),
                "entropy": float(np.mean(window["entropy"])),
                "wall_clock_s": elapsed,
            }
            metrics.write(row)
            if timing_path is not None:
                with open(timing_path, "a") as fh:
                    fh.write(f"{updates},{elapsed:.3f}\n")
            say(
                f"steps {steps} updates {updates} return {row['mean_return']} "
                f"win {row['win_rate']} entropy {row['entropy']:.3f}"
            )
            finished_returns, finished_wins = [], []
            window = {k: [] for k in window}
        if ckpt_dir is not None and cfg.checkpoint_every and updates % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt_dir / f"ckpt_{updates:06d}.gtgc", net.parameters())
    if ckpt_dir is not None:
        last_ckpt = ckpt_dir / "final.gtgc"
        save_checkpoint(last_ckpt, net.parameters())
    return TrainResult(net, steps, updates, last_ckpt, metrics.path)


def load_network(model_cfg: ModelConfig, env_cfg: EnvConfig, checkpoint: str | Path) -> PolicyNet:
    net, _ = build_network(model_cfg, env_cfg)
    net.load_parameters(load_checkpoint(checkpoint))
    return net



# --------------------------------------------------------------------------
# convergence smoke test


@dataclass
class BanditResult:
    converged: bool
    updates: int
    final_prob: float


def bandit_smoke(
    front_end: str,
    max_updates: int = 2000,
    threshold: float = 0.95,
    seed: int = 0,
    lanes: int = 8,
    size: int = 3,
    channels: int = 2,
    model_overrides: dict | None = None,
) -> BanditResult:
    """One-step two-armed bandit: arm 1 pays 1, arm 0 pays 0, episodes end at once.

    The A2C update is the one used in training. Stops as soon as the
    rewarded arm's probability exceeds ``threshold``.
    """
    from .grid import GridObservation, RuleSet
    from .models.policy import ObservationSpec

    rng = np.random.default_rng([seed, 3])
    model_cfg = ModelConfig(front_end=front_end, seed=seed, **(model_overrides or {}))
    spec = ObservationSpec(channels, 2, model_cfg.rule_set.labels, (size, size))
    net = PolicyNet(model_cfg, spec)
    grid = GridObservation(rng.random((size, size, channels)))
    batch = net.grid_batch([grid] * lanes)
    cfg = TrainConfig(total_steps=lanes, workers=lanes, rollout=1)
    opt = RmspropState(lr=cfg.lr, alpha=cfg.rms_alpha, eps=cfg.rms_eps)
    prob = 0.0
    for update in range(1, max_updates + 1):
        logits, values, _ = net.forward(batch)
        prob = float(np.exp(log_softmax(logits[:1]))[0, 1])
        if prob > threshold:
            return BanditResult(True, update - 1, prob)
        actions = sample_actions(logits, rng.random(lanes))
        rewards = (actions == 1).astype(np.float64)
        a2c_update(net, opt, batch, actions, rewards, rewards - values, cfg)
    logits, _, _ = net.forward(batch)
    prob = float(np.exp(log_softmax(logits[:1]))[0, 1])
    return BanditResult(prob > threshold, max_updates, prob)
