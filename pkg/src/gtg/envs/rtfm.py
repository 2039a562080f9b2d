"""Symbolic Read-to-Fight-Monsters with a per-episode knowledge base.

Each episode places two monsters and two weapons. The monsters get distinct
elements and distinct teams; one of those teams is the target. Every element
present is beaten by its own modifier, and the two weapons carry exactly those
two modifiers in random order, so exactly one weapon beats the target monster.

Dynamics (all moves are the 4 movement actions):

* walking onto a weapon picks it up; a weapon already held is dropped there;
* walking onto a monster is a fight; so is a monster walking onto the agent;
* a fight is won (+1) iff the held weapon beats the monster's element and the
  monster is on the target team, otherwise it is lost (-1); either ends the
  episode;
* after each agent move one monster (alternating) takes a uniformly random
  step; it stays put if the step leaves the map or hits a monster or weapon.

Channels: ``agent, monster_0, monster_1, weapon_0, weapon_1, held_0, held_1``.
None of them reveals elements, modifiers or teams; that knowledge lives in the
KB only.

KB variants:

* ``onehop``: entities are the monsters and weapons; ``beat(w, m)`` whenever
  weapon ``w`` defeats monster ``m`` and unary ``target(m)`` for the monster
  to defeat. A held weapon is grounded on the agent's cell.
* ``multihop``: entities are the physical objects plus every team, modifier
  and element of the vocabulary. Binary ``assign`` (modifier to weapon,
  element to monster), ``belong`` (monster to team) and ``beat`` (modifier to
  element); unary ``target`` (team), ``hold`` (modifier held by the agent) and
  the type tags ``team``, ``modifier``, ``element``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import ACTIONS, EnvConfig, GridEnv, Observation, shortest_path
from ..grid import GridObservation
from ..relgraph import KnowledgeBase

ELEMENTS = ("fire", "cold", "lightning", "poison")
MODIFIERS = ("blessed", "shimmering", "grandmasters", "soldiers", "arcane", "mysterious", "fanatical", "gleaming")
TEAMS = ("star_alliance", "order_of_the_forest", "rebel_enclave")
CHANNELS = ("agent", "monster_0", "monster_1", "weapon_0", "weapon_1", "held_0", "held_1")
MONSTERS = ("monster_0", "monster_1")
WEAPONS = ("weapon_0", "weapon_1")

ONEHOP_UNARY = ("target",)
ONEHOP_BINARY = ("beat",)
MULTIHOP_UNARY = ("target", "hold", "team", "modifier", "element")
MULTIHOP_BINARY = ("assign", "belong", "beat")
VARIANTS = ("onehop", "multihop")


def kb_signature(variant: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """``(unary, binary)`` predicate names emitted by a KB variant."""
    if variant == "onehop":
        return ONEHOP_UNARY, ONEHOP_BINARY
    if variant == "multihop":
        return MULTIHOP_UNARY, MULTIHOP_BINARY
    raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def concept_entities() -> tuple[str, ...]:
    return TEAMS + MODIFIERS + ELEMENTS


@dataclass
class RtfmEpisode:
    """Everything the KB describes, plus the physical layout."""

    elements: tuple[int, int]  # per monster slot
    teams: tuple[int, int]  # per monster slot
    target_team: int
    beats: dict[int, int]  # element -> modifier that beats it
    weapon_mods: tuple[int, int]  # per weapon slot
    monsters: list[tuple[int, int] | None] = field(default_factory=list)
    weapons: list[tuple[int, int] | None] = field(default_factory=list)
    held: int | None = None  # weapon slot

    def weapon_beats(self, weapon: int, monster: int) -> bool:
        return self.beats[self.elements[monster]] == self.weapon_mods[weapon]

    @property
    def target_monster(self) -> int:
        return self.teams.index(self.target_team)

    def winning_weapon(self) -> int:
        m = self.target_monster
        return next(w for w in range(2) if self.weapon_beats(w, m))


class Rtfm(GridEnv):
    family = "rtfm"
    channels = CHANNELS
    default_max_steps = 100

    def __init__(self, config: EnvConfig):
        if config.width < 4 or config.height < 4:
            raise ValueError("RTFM needs at least a 4x4 grid")
        kb_signature(config.variant)
        super().__init__(config)
        self.variant = config.variant
        self.episode: RtfmEpisode | None = None
        self.turn = 0

    # -- generation -------------------------------------------------------

    def _generate(self) -> None:
        rng = self.rng
        elements = tuple(int(e) for e in rng.choice(len(ELEMENTS), size=2, replace=False))
        teams = tuple(int(t) for t in rng.choice(len(TEAMS), size=2, replace=False))
        target_team = teams[int(rng.integers(2))]
        mods = rng.choice(len(MODIFIERS), size=2, replace=False)
        beats = {elements[0]: int(mods[0]), elements[1]: int(mods[1])}
        order = rng.permutation(2)
        weapon_mods = (int(mods[order[0]]), int(mods[order[1]]))
        ep = RtfmEpisode(elements, teams, target_team, beats, weapon_mods)
        n = self.width * self.height
        while True:
            cells = rng.choice(n, size=5, replace=False)
            pos = [(int(c % self.width), int(c // self.width)) for c in cells]
            agent, m0, m1, w0, w1 = pos
            # no monster starts next to the agent
            if min(abs(agent[0] - m[0]) + abs(agent[1] - m[1]) for m in (m0, m1)) >= 2:
                break
        self.agent = agent
        ep.monsters = [m0, m1]
        ep.weapons = [w0, w1]
        self.episode = ep
        self.turn = 0

    # -- dynamics ---------------------------------------------------------

    def _fight(self, monster: int) -> tuple[float, bool]:
        ep = self.episode
        win = ep.held is not None and ep.weapon_beats(ep.held, monster) and ep.teams[monster] == ep.target_team
        return (1.0 if win else -1.0), True

    def _move(self, action: int) -> tuple[float, bool]:
        ep = self.episode
        dx, dy = ACTIONS[action]
        x, y = self.agent[0] + dx, self.agent[1] + dy
        if self.in_bounds(x, y):
            if (x, y) in ep.monsters:
                self.agent = (x, y)
                return self._fight(ep.monsters.index((x, y)))
            self.agent = (x, y)
            if (x, y) in ep.weapons:
                slot = ep.weapons.index((x, y))
                ep.weapons[slot] = None
                if ep.held is not None:
                    ep.weapons[ep.held] = (x, y)
                ep.held = slot
        mover = self.turn % 2
        self.turn += 1
        mdx, mdy = ACTIONS[int(self.rng.integers(len(ACTIONS)))]
        mx, my = ep.monsters[mover]
        nx, ny = mx + mdx, my + mdy
        if self.in_bounds(nx, ny) and (nx, ny) not in ep.monsters and (nx, ny) not in ep.weapons:
            ep.monsters[mover] = (nx, ny)
            if (nx, ny) == self.agent:
                return self._fight(mover)
        return 0.0, False

    # -- observation ------------------------------------------------------

    def encode(self) -> np.ndarray:
        ep = self.episode
        f = np.zeros((self.width, self.height, len(CHANNELS)))
        f[self.agent + (0,)] = 1.0
        for i, m in enumerate(ep.monsters):
            f[m + (1 + i,)] = 1.0
        for i, w in enumerate(ep.weapons):
            if w is not None:
                f[w + (3 + i,)] = 1.0
        if ep.held is not None:
            f[self.agent + (5 + ep.held,)] = 1.0
        return f

    def knowledge_base(self) -> tuple[KnowledgeBase, dict[str, int]]:
        """The episode KB and the grounding of its physical entities onto cells."""
        ep = self.episode
        cell_of = {name: self.node_id(*ep.monsters[i]) for i, name in enumerate(MONSTERS)}
        for i, name in enumerate(WEAPONS):
            cell = self.agent if ep.held == i else ep.weapons[i]
            cell_of[name] = self.node_id(*cell)
        physical = MONSTERS + WEAPONS
        unary_names, binary_names = kb_signature(self.variant)
        if self.variant == "onehop":
            unary = [("target", MONSTERS[ep.target_monster])]
            binary = [
                ("beat", WEAPONS[w], MONSTERS[m])
                for w in range(2)
                for m in range(2)
                if ep.weapon_beats(w, m)
            ]
            kb = KnowledgeBase(physical, unary_names, binary_names, tuple(unary), tuple(binary))
            return kb, cell_of
        unary = [("target", TEAMS[ep.target_team])]
        unary += [("team", t) for t in TEAMS]
        unary += [("modifier", m) for m in MODIFIERS]
        unary += [("element", e) for e in ELEMENTS]
        if ep.held is not None:
            unary.append(("hold", MODIFIERS[ep.weapon_mods[ep.held]]))
        binary = []
        for w in range(2):
            binary.append(("assign", MODIFIERS[ep.weapon_mods[w]], WEAPONS[w]))
        for m in range(2):
            binary.append(("assign", ELEMENTS[ep.elements[m]], MONSTERS[m]))
            binary.append(("belong", MONSTERS[m], TEAMS[ep.teams[m]]))
        for element, modifier in ep.beats.items():
            binary.append(("beat", MODIFIERS[modifier], ELEMENTS[element]))
        kb = KnowledgeBase(
            physical + concept_entities(), unary_names, binary_names, tuple(unary), tuple(binary)
        )
        return kb, cell_of

    def observe(self) -> Observation:
        kb, grounding = self.knowledge_base()
        return Observation(GridObservation(self.encode()), kb=kb, grounding=grounding)

    def render(self) -> str:
        ep = self.episode
        grid = [["." for _ in range(self.width)] for _ in range(self.height)]
        for i, w in enumerate(ep.weapons):
            if w is not None:
                grid[w[1]][w[0]] = "w" if i == 0 else "v"
        for i, (x, y) in enumerate(ep.monsters):
            grid[y][x] = "M" if i == 0 else "N"
        grid[self.agent[1]][self.agent[0]] = "@"
        return "\n".join("".join(r) for r in grid)


def decode_rtfm(features: np.ndarray) -> dict:
    """Physical layout from an RTFM feature map."""
    f = np.asarray(features)

    def find(c):
        hits = np.argwhere(f[:, :, c] == 1)
        return tuple(int(v) for v in hits[0]) if len(hits) else None

    agent = find(0)
    held = [i for i in range(2) if f[agent + (5 + i,)] == 1]
    return {
        "agent": agent,
        "monsters": [find(1), find(2)],
        "weapons": [find(3), find(4)],
        "held": held[0] if held else None,
    }


# --------------------------------------------------------------------------
# scripted policies


def _danger_cells(env: Rtfm, dangerous: list[int]) -> set[tuple[int, int]]:
    out = set()
    for m in dangerous:
        mx, my = env.episode.monsters[m]
        out.add((mx, my))
        for dx, dy in ACTIONS:
            out.add((mx + dx, my + dy))
    return out


def _plan(env: Rtfm, weapon: int, monster: int) -> int:
    """One action of the fetch-``weapon``-then-attack-``monster`` plan, avoiding danger."""
    first = _route(env, weapon, monster)
    return _guard(env, first, weapon, monster)


def _route(env: Rtfm, weapon: int, monster: int) -> int:
    ep = env.episode
    holding = ep.held == weapon
    if holding:
        # the chosen monster is harmless to the plan; the other one is not
        dangerous = [1 - monster]
        goal = [ep.monsters[monster]]
    else:
        dangerous = [0, 1]
        goal = [ep.weapons[weapon]]
    avoid = _danger_cells(env, dangerous)
    blocked = set(avoid)
    for w, cell in enumerate(ep.weapons):
        if cell is not None and w != weapon:
            blocked.add(cell)
    passable = lambda x, y: (x, y) not in blocked
    path = shortest_path(env.width, env.height, env.agent, goal, passable)
    if path is None:
        # relax: only refuse to step onto a monster or next to the one about to move
        mover = env.turn % 2
        relaxed = set(_danger_cells(env, [mover])) | {tuple(m) for m in ep.monsters}
        relaxed -= set(goal)
        path = shortest_path(env.width, env.height, env.agent, goal, lambda x, y: (x, y) not in relaxed)
    if path:
        return path[0]
    # no route: step to the safest neighbouring cell (or bump a wall)
    best, best_score = 0, -1
    for a, (dx, dy) in enumerate(ACTIONS):
        nx, ny = env.agent[0] + dx, env.agent[1] + dy
        if not env.in_bounds(nx, ny) or (nx, ny) in ep.monsters:
            continue
        score = min(abs(nx - mx) + abs(ny - my) for m, (mx, my) in enumerate(ep.monsters) if m in dangerous)
        if score > best_score:
            best, best_score = a, score
    return best


def _landing(env: Rtfm, action: int) -> tuple[int, int]:
    x, y = env.agent[0] + ACTIONS[action][0], env.agent[1] + ACTIONS[action][1]
    return (x, y) if env.in_bounds(x, y) else env.agent


def _guard(env: Rtfm, action: int, weapon: int, monster: int) -> int:
    """Replace ``action`` if the monster moving next could walk onto the landing cell.

    Only the mover matters for this one step; a monster the plan is ready to
    fight is never a threat.
    """
    ep = env.episode
    armed = ep.held == weapon
    mover = env.turn % 2

    def threat(m: int) -> bool:
        return not (armed and m == monster)

    def safe(cell) -> bool:
        for m, pos in enumerate(ep.monsters):
            if cell == pos and threat(m):
                return False
        if threat(mover):
            mx, my = ep.monsters[mover]
            if abs(cell[0] - mx) + abs(cell[1] - my) == 1:
                return False
        return True

    if safe(_landing(env, action)):
        return action
    target = ep.monsters[monster] if armed else ep.weapons[weapon]
    options = [a for a in range(len(ACTIONS)) if safe(_landing(env, a))]
    if not options:
        return action
    dist = lambda c: abs(c[0] - target[0]) + abs(c[1] - target[1])
    return min(options, key=lambda a: dist(_landing(env, a)))


def oracle_action(env: Rtfm) -> int:
    """Reads the episode's knowledge: fetch the weapon that beats the target, then attack it."""
    ep = env.episode
    return _plan(env, ep.winning_weapon(), ep.target_monster)


class BlindPolicy:
    """Commits to a uniformly random weapon and monster at the start of an episode."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.choice: tuple[int, int] | None = None
        self.episode_id = None

    def __call__(self, env: Rtfm) -> int:
        if self.episode_id != env.episode_seed or self.choice is None:
            self.episode_id = env.episode_seed
            self.choice = (int(self.rng.integers(2)), int(self.rng.integers(2)))
        return _plan(env, *self.choice)
