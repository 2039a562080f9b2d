"""Reduced Box-World: goal length 2, one distractor branch of length 1.

A box is two horizontally adjacent cells: its content on the left and its
lock on the right. Objects in one episode:

    loose key k0
    box (lock k0, content k1)
    gem box (lock k1, content gem)
    distractor box (lock k0 or k1, content d), where ``d`` opens nothing

Walking onto a loose key picks it up, replacing any held key. Walking into a
lock with the matching key opens it (the key is used up, the content becomes
loose); any other lock, and any content still boxed, blocks movement. Picking
up the freed gem ends the episode with reward 1. Opening the distractor spends
the only key that leads on, so the episode then runs out its step limit.

Channels: ``agent, gem``, then ``key_c``, ``lock_c`` and ``held_c`` for each
palette colour ``c``; ``held_c`` is set on the agent's cell.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .base import ACTIONS, EnvConfig, GridEnv

PALETTE = ("red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple")
N_COLORS = len(PALETTE)
GEM = -1  # content colour of the gem box
CHANNELS = (
    ("agent", "gem")
    + tuple(f"key_{c}" for c in PALETTE)
    + tuple(f"lock_{c}" for c in PALETTE)
    + tuple(f"held_{c}" for c in PALETTE)
)
KEY0, LOCK0, HELD0 = 2, 2 + N_COLORS, 2 + 2 * N_COLORS


@dataclass(frozen=True)
class BoxState:
    """Hashable symbolic state used by the solver and the decoder."""

    agent: tuple[int, int]
    held: int | None  # colour index
    loose: frozenset  # ((x, y), colour or GEM)
    boxes: frozenset  # ((x, y) of lock, lock colour, content colour or GEM)


def _step(state: BoxState, action: int, width: int, height: int) -> tuple[BoxState, float, bool]:
    dx, dy = ACTIONS[action]
    x, y = state.agent[0] + dx, state.agent[1] + dy
    if not (0 <= x < width and 0 <= y < height):
        return state, 0.0, False
    for lock, color, content in state.boxes:
        if (x, y) == (lock[0] - 1, lock[1]):
            return state, 0.0, False  # boxed content blocks
        if (x, y) == lock:
            if state.held != color:
                return state, 0.0, False
            boxes = state.boxes - {(lock, color, content)}
            loose = state.loose | {((lock[0] - 1, lock[1]), content)}
            return BoxState((x, y), None, loose, boxes), 0.0, False
    for cell, color in state.loose:
        if cell == (x, y):
            if color == GEM:
                return BoxState((x, y), state.held, state.loose - {(cell, color)}, state.boxes), 1.0, True
            return BoxState((x, y), color, state.loose - {(cell, color)}, state.boxes), 0.0, False
    return BoxState((x, y), state.held, state.loose, state.boxes), 0.0, False


def solve(state: BoxState, width: int, height: int, limit: int | None = None) -> list[int] | None:
    """Breadth-first search over symbolic states; shortest winning action list."""
    start = state
    prev: dict[BoxState, tuple[BoxState, int]] = {start: (start, -1)}
    queue = deque([(start, 0)])
    while queue:
        cur, depth = queue.popleft()
        if limit is not None and depth >= limit:
            continue
        for a in range(len(ACTIONS)):
            nxt, reward, done = _step(cur, a, width, height)
            if done and reward > 0:
                actions = [a]
                while cur != start:
                    cur, a = prev[cur]
                    actions.append(a)
                return actions[::-1]
            if nxt not in prev:
                prev[nxt] = (cur, a)
                queue.append((nxt, depth + 1))
    return None


class BoxWorld(GridEnv):
    family = "boxworld"
    channels = CHANNELS
    default_max_steps = 120

    def __init__(self, config: EnvConfig):
        if config.width < 6 or config.height < 4:
            raise ValueError("Box-World needs at least a 6x4 grid")
        super().__init__(config)
        self.state: BoxState | None = None

    def _generate(self) -> None:
        for _ in range(1000):
            state = self._sample()
            if state is not None and solve(state, self.width, self.height) is not None:
                self.state = state
                self.agent = state.agent
                return
        raise RuntimeError("could not generate a solvable Box-World layout")

    def _sample(self) -> BoxState | None:
        rng = self.rng
        k0, k1, d = (int(c) for c in rng.choice(N_COLORS, size=3, replace=False))
        distractor_lock = (k0, k1)[int(rng.integers(2))]
        # one cell for the key and agent, two cells for each box
        widths = [1, 2, 2, 2, 1]
        taken: set[tuple[int, int]] = set()
        halo: set[tuple[int, int]] = set()
        anchors = []
        for wdt in widths:
            ok = False
            for _ in range(200):
                x = int(rng.integers(0, self.width - wdt + 1))
                y = int(rng.integers(0, self.height))
                cells = [(x + i, y) for i in range(wdt)]
                if any(c in halo for c in cells):
                    continue
                for cx, cy in cells:
                    taken.add((cx, cy))
                    for ox in (-1, 0, 1):
                        for oy in (-1, 0, 1):
                            halo.add((cx + ox, cy + oy))
                anchors.append((x, y))
                ok = True
                break
            if not ok:
                return None
        key_cell, box1, gem_box, dis_box, agent = anchors
        boxes = frozenset(
            {
                ((box1[0] + 1, box1[1]), k0, k1),
                ((gem_box[0] + 1, gem_box[1]), k1, GEM),
                ((dis_box[0] + 1, dis_box[1]), distractor_lock, d),
            }
        )
        return BoxState(agent, None, frozenset({(key_cell, k0)}), boxes)

    def _move(self, action: int) -> tuple[float, bool]:
        self.state, reward, done = _step(self.state, action, self.width, self.height)
        self.agent = self.state.agent
        return reward, done

    def encode(self) -> np.ndarray:
        return encode_box_state(self.state, self.width, self.height)

    def render(self) -> str:
        grid = [["." for _ in range(self.width)] for _ in range(self.height)]
        for (x, y), color in self.state.loose:
            grid[y][x] = "*" if color == GEM else PALETTE[color][0]
        for (x, y), lock, content in self.state.boxes:
            grid[y][x] = PALETTE[lock][0].upper()
            grid[y][x - 1] = "*" if content == GEM else PALETTE[content][0]
        x, y = self.state.agent
        grid[y][x] = "@"
        return "\n".join("".join(r) for r in grid)


def encode_box_state(state: BoxState, width: int, height: int) -> np.ndarray:
    f = np.zeros((width, height, len(CHANNELS)))
    ax, ay = state.agent
    f[ax, ay, 0] = 1.0
    if state.held is not None:
        f[ax, ay, HELD0 + state.held] = 1.0
    for (x, y), color in state.loose:
        f[x, y, 1 if color == GEM else KEY0 + color] = 1.0
    for (x, y), lock, content in state.boxes:
        f[x, y, LOCK0 + lock] = 1.0
        f[x - 1, y, 1 if content == GEM else KEY0 + content] = 1.0
    return f


def decode_box_state(features: np.ndarray) -> BoxState:
    """Inverse of :func:`encode_box_state`; a key or gem with a lock to its right is boxed."""
    f = np.asarray(features)
    w = f.shape[0]
    agent = tuple(int(v) for v in np.argwhere(f[:, :, 0] == 1)[0])
    held_idx = np.flatnonzero(f[agent[0], agent[1], HELD0:] == 1)
    held = int(held_idx[0]) if held_idx.size else None
    locks = {}
    for x, y, c in np.argwhere(f[:, :, LOCK0 : LOCK0 + N_COLORS] == 1):
        locks[(int(x), int(y))] = int(c)
    items = {}
    for x, y in np.argwhere(f[:, :, 1] == 1):
        items[(int(x), int(y))] = GEM
    for x, y, c in np.argwhere(f[:, :, KEY0 : KEY0 + N_COLORS] == 1):
        items[(int(x), int(y))] = int(c)
    loose, boxes = set(), set()
    for cell, color in items.items():
        lock = (cell[0] + 1, cell[1])
        if cell[0] + 1 < w and lock in locks:
            boxes.add((lock, locks[lock], color))
        else:
            loose.add((cell, color))
    return BoxState(agent, held, frozenset(loose), frozenset(boxes))
