"""Shared episodic interface for the grid environments.

Every environment owns one ``numpy`` generator seeded from its config. Each
``reset()`` draws a fresh episode seed from that stream (or takes one
explicitly) and builds the episode from a generator seeded by it alone, so an
episode is fully identified by ``(config, episode_seed, actions)``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from ..grid import GridObservation
from ..relgraph import KnowledgeBase

# movement actions: (dx, dy), y grows downward
ACTIONS = ((1, 0), (0, 1), (-1, 0), (0, -1))
ACTION_NAMES = ("right", "down", "left", "up")
NUM_ACTIONS = len(ACTIONS)

FAMILIES = ("lava", "portal", "boxworld", "rtfm")
MAX_SEED = 2**63 - 1


@dataclass(frozen=True)
class EnvConfig:
    family: str = "lava"
    width: int = 7
    height: int = 7
    level: int = 1
    variant: str = "onehop"
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def with_(self, **changes) -> "EnvConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Observation:
    """A grid feature map plus whatever relational side information the env has.

    ``grounding`` maps KB entity names onto the node id of the cell holding
    the physical object.
    """

    grid: GridObservation
    portal_pairs: tuple[tuple[int, int], ...] = ()
    kb: KnowledgeBase | None = None
    grounding: Mapping[str, int] = field(default_factory=dict)


class GridEnv:
    """Base class; subclasses implement ``_generate``, ``_move`` and ``encode``."""

    family = ""
    channels: tuple[str, ...] = ()
    default_max_steps = 100

    def __init__(self, config: EnvConfig):
        self.config = config
        self.width, self.height = config.width, config.height
        self.max_steps = config.max_steps or self.default_max_steps
        self._stream = np.random.default_rng(config.seed)
        self.rng: np.random.Generator | None = None
        self.episode_seed: int | None = None
        self.t = 0
        self.done = True
        self.agent = (0, 0)

    @property
    def num_actions(self) -> int:
        return NUM_ACTIONS

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def node_id(self, x: int, y: int) -> int:
        return y * self.width + x

    def reset(self, seed: int | None = None) -> Observation:
        if seed is None:
            seed = int(self._stream.integers(MAX_SEED))
        self.episode_seed = int(seed)
        self.rng = np.random.default_rng(self.episode_seed)
        self.t = 0
        self.done = False
        self._generate()
        return self.observe()

    def step(self, action: int) -> tuple[Observation, float, bool]:
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        if not (isinstance(action, (int, np.integer)) and 0 <= action < NUM_ACTIONS):
            raise ValueError(f"invalid action {action!r}; expected 0..{NUM_ACTIONS - 1}")
        self.t += 1
        reward, done = self._move(int(action))
        if not done and self.t >= self.max_steps:
            done = True
        self.done = done
        return self.observe(), float(reward), done

    def observe(self) -> Observation:
        return Observation(GridObservation(self.encode()))

    # subclass hooks
    def _generate(self) -> None:
        raise NotImplementedError

    def _move(self, action: int) -> tuple[float, bool]:
        raise NotImplementedError

    def encode(self) -> np.ndarray:
        raise NotImplementedError

    def render(self) -> str:
        raise NotImplementedError


def flood_fill(
    width: int,
    height: int,
    start: tuple[int, int],
    passable,
    jumps: Mapping[tuple[int, int], tuple[int, int]] | None = None,
) -> set[tuple[int, int]]:
    """Cells reachable from ``start`` by 4-neighbour moves.

    ``passable(x, y)`` says whether a cell may be entered; entering a cell in
    ``jumps`` lands on its partner instead.
    """
    jumps = jumps or {}
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for dx, dy in ACTIONS:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < width and 0 <= ny < height) or not passable(nx, ny):
                continue
            cell = jumps.get((nx, ny), (nx, ny))
            if cell not in seen:
                seen.add(cell)
                queue.append(cell)
    return seen


def shortest_path(
    width: int,
    height: int,
    start: tuple[int, int],
    goals: Iterable[tuple[int, int]],
    passable,
) -> list[int] | None:
    """BFS action sequence from ``start`` into any goal cell (goals may be impassable to pass through)."""
    goals = set(goals)
    if start in goals:
        return []
    prev: dict[tuple[int, int], tuple[tuple[int, int], int]] = {start: (start, -1)}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for a, (dx, dy) in enumerate(ACTIONS):
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in prev or not (0 <= nxt[0] < width and 0 <= nxt[1] < height):
                continue
            if nxt in goals:
                actions = [a]
                while cur != start:
                    cur, a = prev[cur]
                    actions.append(a)
                return actions[::-1]
            if passable(*nxt):
                prev[nxt] = (cur, a)
                queue.append(nxt)
    return None


# --------------------------------------------------------------------------
# replay dumps


@dataclass
class EpisodeLog:
    config: EnvConfig
    episode_seed: int
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)

    def dumps(self) -> str:
        c = self.config
        lines = [
            "# gtg episode replay",
            f"family {c.family}",
            f"size {c.width} {c.height}",
            f"level {c.level}",
            f"variant {c.variant}",
            f"max_steps {c.max_steps if c.max_steps is not None else '-'}",
            f"episode_seed {self.episode_seed}",
        ]
        lines += [f"step {a} {r!r}" for a, r in zip(self.actions, self.rewards)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EpisodeLog":
        fields: dict[str, list[str]] = {}
        actions, rewards = [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, *rest = line.split()
            try:
                if key == "step":
                    actions.append(int(rest[0]))
                    rewards.append(float(rest[1]))
                else:
                    fields[key] = rest
            except (IndexError, ValueError) as exc:
                raise ValueError(f"line {lineno}: malformed replay entry {raw!r}") from exc
        try:
            max_steps = None if fields["max_steps"][0] == "-" else int(fields["max_steps"][0])
            config = EnvConfig(
                family=fields["family"][0],
                width=int(fields["size"][0]),
                height=int(fields["size"][1]),
                level=int(fields["level"][0]),
                variant=fields["variant"][0],
                max_steps=max_steps,
            )
            seed = int(fields["episode_seed"][0])
        except KeyError as exc:
            raise ValueError(f"replay is missing the {exc.args[0]!r} entry") from exc
        return cls(config, seed, actions, rewards)


def replay(log: EpisodeLog, make) -> tuple[bool, list[float]]:
    """Re-run a logged episode; returns ``(rewards_match, replayed_rewards)``."""
    env = make(log.config)
    env.reset(log.episode_seed)
    got = []
    for a in log.actions:
        _, r, done = env.step(a)
        got.append(r)
        if done:
            break
    return got == list(log.rewards), got

