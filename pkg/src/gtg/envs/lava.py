"""LavaCrossing and its portal variant.

The map has no outer wall; the agent starts at ``(0, 0)`` and the goal sits at
``(W-1, H-1)``. Rivers run the full width or height of the map at odd
coordinates. Gaps are placed by walking room to room (MiniGrid's scheme), so a
route always exists.

Portal-LavaCrossing has one gapless river and a portal on each side. Entering
a portal lands the agent on its partner.

Channels: ``agent, lava, goal, portal``.
"""

from __future__ import annotations

import numpy as np

from .base import ACTIONS, EnvConfig, GridEnv, Observation, flood_fill
from ..grid import GridObservation

EMPTY, LAVA = 0, 1
CHANNELS = ("agent", "lava", "goal", "portal")


def lava_reward(t: int, t_max: int) -> float:
    return 1.0 - 0.9 * (t / t_max)


class LavaCrossing(GridEnv):
    family = "lava"
    channels = CHANNELS

    def __init__(self, config: EnvConfig):
        if config.width < 5 or config.height < 5:
            raise ValueError("LavaCrossing needs a grid of at least 5x5")
        super().__init__(config)
        self.level = config.level
        self.max_steps = config.max_steps or 4 * self.width * self.height
        self.t_max = self.max_steps
        n_slots = len(range(1, self.width - 1, 2)) + len(range(1, self.height - 1, 2))
        if not 1 <= self.level <= min(3, n_slots):
            raise ValueError(f"level must be in 1..{min(3, n_slots)} for this grid size")
        self.cells = np.zeros((self.width, self.height), dtype=np.int8)
        self.goal = (self.width - 1, self.height - 1)
        self.portals: tuple[tuple[int, int], ...] = ()
        self.rivers: list[tuple[str, int]] = []

    # -- generation -------------------------------------------------------

    def _generate(self) -> None:
        rng = self.rng
        w, h = self.width, self.height
        slots = [("v", x) for x in range(1, w - 1, 2)] + [("h", y) for y in range(1, h - 1, 2)]
        order = rng.permutation(len(slots))[: self.level]
        self.rivers = [slots[i] for i in order]
        self.cells = np.zeros((w, h), dtype=np.int8)
        for kind, c in self.rivers:
            if kind == "v":
                self.cells[c, :] = LAVA
            else:
                self.cells[:, c] = LAVA
        xs = sorted(c for k, c in self.rivers if k == "v")
        ys = sorted(c for k, c in self.rivers if k == "h")
        # crossing a vertical river is a horizontal move and vice versa
        path = ["x"] * len(xs) + ["y"] * len(ys)
        path = [path[i] for i in rng.permutation(len(path))]
        lim_x, lim_y = [-1, *xs, w], [-1, *ys, h]
        room_x = room_y = 0
        for direction in path:
            if direction == "x":
                gx = lim_x[room_x + 1]
                gy = int(rng.integers(lim_y[room_y] + 1, lim_y[room_y + 1]))
                room_x += 1
            else:
                gy = lim_y[room_y + 1]
                gx = int(rng.integers(lim_x[room_x] + 1, lim_x[room_x + 1]))
                room_y += 1
            self.cells[gx, gy] = EMPTY
        self.agent = (0, 0)
        self.portals = ()

    # -- dynamics ---------------------------------------------------------

    def _jumps(self) -> dict[tuple[int, int], tuple[int, int]]:
        out = {}
        for p, q in self.portals:
            out[p], out[q] = q, p
        return out

    def _move(self, action: int) -> tuple[float, bool]:
        dx, dy = ACTIONS[action]
        x, y = self.agent[0] + dx, self.agent[1] + dy
        if not self.in_bounds(x, y):
            return 0.0, False
        if self.cells[x, y] == LAVA:
            self.agent = (x, y)
            return 0.0, True
        self.agent = self._jumps().get((x, y), (x, y))
        if self.agent == self.goal:
            return lava_reward(self.t, self.t_max), True
        return 0.0, False

    # -- observation ------------------------------------------------------

    def encode(self) -> np.ndarray:
        f = np.zeros((self.width, self.height, len(CHANNELS)))
        f[self.agent + (0,)] = 1.0
        f[:, :, 1] = self.cells == LAVA
        f[self.goal + (2,)] = 1.0
        for pair in self.portals:
            for cell in pair:
                f[cell + (3,)] = 1.0
        return f

    def observe(self) -> Observation:
        pairs = tuple((self.node_id(*p), self.node_id(*q)) for p, q in self.portals)
        return Observation(GridObservation(self.encode()), portal_pairs=pairs)

    def render(self) -> str:
        rows = []
        portal_cells = {c for pair in self.portals for c in pair}
        for y in range(self.height):
            row = ""
            for x in range(self.width):
                if (x, y) == self.agent:
                    row += "A"
                elif (x, y) == self.goal:
                    row += "G"
                elif (x, y) in portal_cells:
                    row += "O"
                elif self.cells[x, y] == LAVA:
                    row += "~"
                else:
                    row += "."
            rows.append(row)
        return "\n".join(rows)

    def reachable(self, use_portals: bool = True) -> set[tuple[int, int]]:
        return flood_fill(
            self.width,
            self.height,
            self.agent,
            lambda x, y: self.cells[x, y] != LAVA,
            self._jumps() if use_portals else None,
        )

    def solvable(self, use_portals: bool = True) -> bool:
        return self.goal in self.reachable(use_portals)


class PortalLavaCrossing(LavaCrossing):
    family = "portal"

    def __init__(self, config: EnvConfig):
        super().__init__(config.with_(level=1))
        self.config = config

    def _generate(self) -> None:
        rng = self.rng
        w, h = self.width, self.height
        slots = [("v", x) for x in range(1, w - 1, 2)] + [("h", y) for y in range(1, h - 1, 2)]
        kind, c = slots[int(rng.integers(len(slots)))]
        self.rivers = [(kind, c)]
        self.cells = np.zeros((w, h), dtype=np.int8)
        if kind == "v":
            self.cells[c, :] = LAVA
            near = [(x, y) for x in range(c) for y in range(h)]
            far = [(x, y) for x in range(c + 1, w) for y in range(h)]
        else:
            self.cells[:, c] = LAVA
            near = [(x, y) for y in range(c) for x in range(w)]
            far = [(x, y) for y in range(c + 1, h) for x in range(w)]
        self.agent = (0, 0)
        near = [p for p in near if p != self.agent]
        far = [p for p in far if p != self.goal]
        p = near[int(rng.integers(len(near)))]
        q = far[int(rng.integers(len(far)))]
        self.portals = ((p, q),)


def decode_lava(features: np.ndarray) -> dict:
    """Symbolic contents of a lava-family feature map."""
    f = np.asarray(features)
    if f.ndim != 3 or f.shape[2] != len(CHANNELS):
        raise ValueError("expected a W x H x 4 lava feature map")
    agents = [tuple(int(v) for v in c) for c in np.argwhere(f[:, :, 0] == 1)]
    goals = [tuple(int(v) for v in c) for c in np.argwhere(f[:, :, 2] == 1)]
    return {
        "agent": agents[0] if agents else None,
        "goal": goals[0] if goals else None,
        "lava": f[:, :, 1] == 1,
        "portals": {tuple(int(v) for v in c) for c in np.argwhere(f[:, :, 3] == 1)},
    }
