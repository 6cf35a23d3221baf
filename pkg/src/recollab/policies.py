"""Scripted teammate types, their best responses, and BFS navigation.

Teammates choose a subtask by weight among the ones their held item allows,
stick to it for ``commitment`` steps, and walk to the matching station.
Best responses are need-aware: they count what is already in play and only
do the part of the pipeline their role covers.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .env import (
    DELTAS,
    MOVES,
    Action,
    Cell,
    GridState,
    HeldItem,
    Layout,
    Observation,
    Tile,
    add,
    chebyshev,
)


class TeammateType(enum.IntEnum):
    DEFAULT = 0
    POT_FOCUSED = 1
    PLATE_FOCUSED = 2
    SERVE_FOCUSED = 3
    MIXED = 4

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "TeammateType":
        norm = text.strip().lower().replace("-", "_").replace(" ", "_")
        for t in cls:
            if t.key == norm:
                return t
        raise ValueError(f"unknown teammate type {text!r}")


TYPES = tuple(TeammateType)
M = len(TYPES)


class Subtask(enum.Enum):
    FETCH_ONION = "FetchOnion"
    FILL_POT = "FillPot"
    FETCH_PLATE = "FetchPlate"
    PLATE_SOUP = "PlateSoup"
    DELIVER = "Deliver"
    IDLE = "Idle"


SUBTASKS = tuple(Subtask)

# subtasks a given held item allows
FEASIBLE = {
    HeldItem.NOTHING: (Subtask.FETCH_ONION, Subtask.FILL_POT, Subtask.FETCH_PLATE, Subtask.PLATE_SOUP, Subtask.IDLE),
    HeldItem.ONION: (Subtask.FILL_POT, Subtask.IDLE),
    HeldItem.PLATE: (Subtask.PLATE_SOUP, Subtask.IDLE),
    HeldItem.SOUP: (Subtask.DELIVER, Subtask.IDLE),
}


@dataclass(frozen=True)
class PolicyProfile:
    weights: Mapping[Subtask, float]
    commitment: int = 8
    idle_station: Tile | None = None
    cycle_step: int = 0  # >0: cycle through SUBTASKS, this many steps each

    def __post_init__(self):
        if self.commitment < 1:
            raise ValueError("commitment must be >= 1")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("subtask weights must be nonnegative")
        total = sum(self.weights.values())
        if total <= 0:
            raise ValueError("subtask weights must not all be zero")
        norm = {s: self.weights.get(s, 0.0) / total for s in SUBTASKS}
        object.__setattr__(self, "weights", norm)

    def mass(self, subtasks: Iterable[Subtask]) -> float:
        return sum(self.weights[s] for s in subtasks)


S = Subtask
DEFAULT_PROFILES: dict[TeammateType, PolicyProfile] = {
    # Default samples uniformly among subtasks that currently make progress
    TeammateType.DEFAULT: PolicyProfile(
        {S.FETCH_ONION: 1, S.FILL_POT: 1, S.FETCH_PLATE: 1, S.PLATE_SOUP: 1, S.DELIVER: 1},
        commitment=4,
    ),
    TeammateType.POT_FOCUSED: PolicyProfile(
        {S.FETCH_ONION: 0.45, S.FILL_POT: 0.45, S.FETCH_PLATE: 0.02, S.PLATE_SOUP: 0.02, S.DELIVER: 0.04, S.IDLE: 0.02},
        commitment=8,
    ),
    TeammateType.PLATE_FOCUSED: PolicyProfile(
        {S.FETCH_PLATE: 0.50, S.IDLE: 0.35, S.FETCH_ONION: 0.04, S.FILL_POT: 0.03, S.PLATE_SOUP: 0.05, S.DELIVER: 0.03},
        commitment=8,
        idle_station=Tile.PLATE_PILE,
    ),
    TeammateType.SERVE_FOCUSED: PolicyProfile(
        {S.PLATE_SOUP: 0.45, S.DELIVER: 0.40, S.FETCH_ONION: 0.04, S.FILL_POT: 0.03, S.FETCH_PLATE: 0.04, S.IDLE: 0.04},
        commitment=8,
        idle_station=Tile.SERVE_WINDOW,
    ),
    TeammateType.MIXED: PolicyProfile({s: 1 for s in SUBTASKS}, commitment=5, cycle_step=5, idle_station=Tile.SERVE_WINDOW),
}


def profiles_from_config(section: Mapping[str, Mapping]) -> dict[TeammateType, PolicyProfile]:
    """Override default profiles from a ``{type_key: {weights, commitment, ...}}`` mapping."""
    out = dict(DEFAULT_PROFILES)
    for key, spec in section.items():
        t = TeammateType.parse(key)
        base = out[t]
        weights = base.weights
        if "weights" in spec:
            weights = {Subtask(k): float(v) for k, v in spec["weights"].items()}
        idle = base.idle_station
        if "idle_station" in spec:
            idle = Tile[spec["idle_station"]] if spec["idle_station"] else None
        out[t] = PolicyProfile(
            weights,
            commitment=int(spec.get("commitment", base.commitment)),
            idle_station=idle,
            cycle_step=int(spec.get("cycle_step", base.cycle_step)),
        )
    return out


# -- navigation ------------------------------------------------------------


class Navigator:
    """BFS distance maps for one layout, memoized by (goal cells, obstacle)."""

    def __init__(self, layout: Layout):
        self.layout = layout
        self._cache: dict[tuple[frozenset, Cell | None], dict[Cell, int]] = {}
        self.access: dict[Cell, tuple[Cell, ...]] = {}
        for r in range(layout.height):
            for c in range(layout.width):
                cell = (r, c)
                if layout.tile(cell) is not Tile.FLOOR:
                    self.access[cell] = tuple(
                        n for n in (add(cell, DELTAS[m]) for m in MOVES) if n in layout.floor
                    )
        self.station_access = frozenset(
            n for cell, v in self.access.items() if layout.tile(cell) is not Tile.WALL for n in v
        )

    def distances(self, targets: frozenset[Cell], obstacle: Cell | None) -> dict[Cell, int]:
        key = (targets, obstacle)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        floor = self.layout.floor
        dist: dict[Cell, int] = {}
        queue = deque()
        for t in targets:
            if t != obstacle:
                dist[t] = 0
                queue.append(t)
        while queue:
            cell = queue.popleft()
            d = dist[cell] + 1
            for m in MOVES:
                n = add(cell, DELTAS[m])
                if n in floor and n not in dist and n != obstacle:
                    dist[n] = d
                    queue.append(n)
        self._cache[key] = dist
        return dist

    def staging_cells(self, stations: Iterable[Cell]) -> frozenset[Cell]:
        """Floor cells within Chebyshev distance 1 of a station, avoiding station access cells."""
        near = {
            f for s in stations for f in self.layout.floor if chebyshev(f, s) <= 1
        }
        free = near - self.station_access
        return frozenset(free or near)


_NAVIGATORS: dict[Layout, Navigator] = {}


def navigator(layout: Layout) -> Navigator:
    nav = _NAVIGATORS.get(layout)
    if nav is None:
        nav = _NAVIGATORS[layout] = Navigator(layout)
    return nav


def _move_toward(
    state: GridState, agent: int, targets: frozenset[Cell], avoid_other: bool = True
) -> Action | None:
    """First move of a shortest path onto ``targets``; None if unreachable; STAY if already there."""
    nav = navigator(state.layout)
    me = state.agents[agent].pos
    other = state.agents[1 - agent].pos
    dist = nav.distances(targets, other if avoid_other else None)
    d = dist.get(me)
    if d is None:
        return None
    if d == 0:
        return Action.STAY
    for m in MOVES:
        n = add(me, DELTAS[m])
        if dist.get(n) == d - 1:
            return m
    return None


def _goal_cells(layout: Layout, goal) -> frozenset[Cell]:
    if callable(goal):
        return frozenset(
            (r, c)
            for r in range(layout.height)
            for c in range(layout.width)
            if layout.grid[r][c] is not Tile.FLOOR and goal((r, c))
        )
    return frozenset(goal)


def shortest_path_step(
    state: GridState,
    agent: int,
    goal: Callable[[Cell], bool] | Iterable[Cell],
    avoid_other: bool = True,
) -> Action:
    """Next action toward interacting with a goal station cell.

    ``goal`` is a predicate over cells or an explicit collection of station
    cells. Once on a cell next to a goal the agent turns to face it and then
    returns INTERACT. Unreachable goals give STAY.
    """
    layout = state.layout
    goals = _goal_cells(layout, goal)
    nav = navigator(layout)
    me = state.agents[agent]
    adjacent = [add(me.pos, DELTAS[m]) for m in MOVES]
    if any(n in goals for n in adjacent):
        front = add(me.pos, DELTAS[me.facing])
        if front in goals:
            return Action.INTERACT
        for m, n in zip(MOVES, adjacent):
            if n in goals:
                return m
    targets = frozenset(a for g in goals for a in nav.access.get(g, ()))
    if not targets:
        return Action.STAY
    act = _move_toward(state, agent, targets, avoid_other)
    return Action.STAY if act is None else act


def _step_or_push(state: GridState, agent: int, goal) -> Action:
    """Like shortest_path_step, but walk into the other agent rather than wait forever."""
    act = shortest_path_step(state, agent, goal)
    if act is Action.STAY:
        act = shortest_path_step(state, agent, goal, avoid_other=False)
    return act


def stage_near(state: GridState, agent: int, stations: Iterable[Cell]) -> Action:
    """Walk to a waiting cell beside the stations without occupying their access cells."""
    cells = navigator(state.layout).staging_cells(stations)
    act = _move_toward(state, agent, cells)
    if act is None:
        act = _move_toward(state, agent, cells, avoid_other=False)
    return Action.STAY if act is None else act


# -- subtask execution -----------------------------------------------------


def _pots_where(state: GridState, pred) -> list[Cell]:
    return [c for c, p in state.pots if pred(p)]


def _stations(state: GridState, tile: Tile) -> tuple[Cell, ...]:
    return state.layout.cells_by_tile[tile]


def execute(state: GridState, agent: int, subtask: Subtask, idle_station: Tile | None = None) -> Action:
    """One step of ``subtask`` for ``agent`` given what it holds."""
    held = state.agents[agent].held
    if subtask is Subtask.IDLE:
        if idle_station is None:
            return Action.STAY
        return stage_near(state, agent, _stations(state, idle_station))
    if held is HeldItem.NOTHING:
        if subtask in (Subtask.FETCH_ONION, Subtask.FILL_POT):
            return _step_or_push(state, agent, _stations(state, Tile.ONION_PILE))
        if subtask in (Subtask.FETCH_PLATE, Subtask.PLATE_SOUP):
            return _step_or_push(state, agent, _stations(state, Tile.PLATE_PILE))
        return Action.STAY
    if held is HeldItem.ONION:
        pots = _pots_where(state, lambda p: p.accepts_onion)
        if pots:
            return _step_or_push(state, agent, pots)
        return stage_near(state, agent, state.layout.pots)
    if held is HeldItem.PLATE:
        ready = _pots_where(state, lambda p: p.ready)
        if ready:
            return _step_or_push(state, agent, ready)
        busy = _pots_where(state, lambda p: p.cooking) or _pots_where(state, lambda p: p.onion_count > 0)
        return stage_near(state, agent, busy or state.layout.pots)
    return _step_or_push(state, agent, _stations(state, Tile.SERVE_WINDOW))


@dataclass
class _Memory:
    subtask: Subtask | None = None
    steps_left: int = 0
    held: HeldItem | None = None
    last_pos: Cell | None = None
    last_move: Action | None = None
    stuck: int = 0
    useless_hold: int = 0
    phase_offset: int | None = None


def _update_stuck(mem: _Memory, obs: Observation) -> None:
    me = obs.me
    if mem.last_move is not None and mem.last_pos == me.pos:
        target = add(me.pos, DELTAS[mem.last_move])
        mem.stuck = mem.stuck + 1 if target in obs.state.layout.floor else 0
    else:
        mem.stuck = 0


# steps an agent keeps an item nobody can currently use before setting it down
HOLD_PATIENCE = {HeldItem.ONION: 40, HeldItem.PLATE: 12}


def _item_useless(state: GridState, held: HeldItem) -> bool:
    if held is HeldItem.ONION:
        return not any(p.accepts_onion for _, p in state.pots)
    if held is HeldItem.PLATE:
        return not any(p.onion_count > 0 for _, p in state.pots)
    return False


def _free_counters(state: GridState) -> list[Cell]:
    nav = navigator(state.layout)
    taken = {c for c, _ in state.counters}
    return [c for c, acc in nav.access.items() if acc and state.layout.tile(c) is Tile.WALL and c not in taken]


def _check_hold(mem: _Memory, obs: Observation) -> Action | None:
    """Set down an item that has been useless for too long."""
    held = obs.me.held
    if _item_useless(obs.state, held):
        mem.useless_hold += 1
    else:
        mem.useless_hold = 0
    if held in HOLD_PATIENCE and mem.useless_hold >= HOLD_PATIENCE[held]:
        counters = _free_counters(obs.state)
        if counters:
            return _step_or_push(obs.state, obs.agent, counters)
    return None


def _unstick(obs: Observation, rng: np.random.Generator) -> Action:
    floor = obs.state.layout.floor
    other = obs.other.pos
    options = [m for m in MOVES if add(obs.me.pos, DELTAS[m]) in floor and add(obs.me.pos, DELTAS[m]) != other]
    if not options:
        return Action.STAY
    return options[int(rng.integers(len(options)))]


def _finish(mem: _Memory, obs: Observation, act: Action, rng: np.random.Generator, patience: int = 2) -> Action:
    if mem.stuck >= patience and act in DELTAS:
        act = _unstick(obs, rng)
        mem.stuck = 0
    mem.last_pos = obs.me.pos
    mem.last_move = act if act in DELTAS else None
    return act


def _productive(state: GridState, agent: int) -> list[Subtask]:
    held = state.agents[agent].held
    if held is HeldItem.ONION:
        return [Subtask.FILL_POT]
    if held is HeldItem.PLATE:
        return [Subtask.PLATE_SOUP]
    if held is HeldItem.SOUP:
        return [Subtask.DELIVER]
    out = []
    if any(p.accepts_onion for _, p in state.pots):
        out += [Subtask.FETCH_ONION, Subtask.FILL_POT]
    plates = sum(a.held in (HeldItem.PLATE, HeldItem.SOUP) for a in state.agents)
    # a pot that has started filling, or is about to, will need a plate soon
    soups = sum(p.onion_count > 0 or p.cooking or p.ready for _, p in state.pots)
    if soups == 0 and state.agents[1 - agent].held is HeldItem.ONION:
        soups = 1
    if soups > plates:
        out += [Subtask.FETCH_PLATE, Subtask.PLATE_SOUP]
    return out


class ScriptedTeammate:
    """Stateful teammate of one type; the commitment counter is its only memory."""

    def __init__(self, ttype: TeammateType, rng: np.random.Generator, profile: PolicyProfile | None = None):
        self.type = TeammateType(ttype)
        self.rng = rng
        self.profile = profile or DEFAULT_PROFILES[self.type]
        self.mem = _Memory()

    def _sample(self, options: list[Subtask]) -> Subtask:
        w = np.array([self.profile.weights[s] for s in options], dtype=float)
        if w.sum() <= 0:
            return options[int(self.rng.integers(len(options)))]
        return options[int(self.rng.choice(len(options), p=w / w.sum()))]

    def _choose(self, obs: Observation) -> Subtask:
        held = obs.me.held
        feasible = list(FEASIBLE[held])
        if held is not HeldItem.NOTHING and self.profile.idle_station is None:
            feasible.remove(Subtask.IDLE)
        if self.type is TeammateType.DEFAULT:
            options = _productive(obs.state, obs.agent)
            return options[int(self.rng.integers(len(options)))] if options else Subtask.IDLE
        return self._sample(feasible)

    def act(self, obs: Observation) -> Action:
        mem = self.mem
        _update_stuck(mem, obs)
        held = obs.me.held
        prof = self.profile
        if prof.cycle_step > 0:
            if mem.phase_offset is None:
                mem.phase_offset = int(self.rng.integers(prof.cycle_step * len(SUBTASKS)))
            phase = ((obs.state.t + mem.phase_offset) // prof.cycle_step) % len(SUBTASKS)
            preferred = SUBTASKS[phase]
            if preferred in FEASIBLE[held] and (preferred is not Subtask.IDLE or held is HeldItem.NOTHING):
                mem.subtask = preferred
            elif mem.subtask not in FEASIBLE[held] or mem.subtask is Subtask.IDLE or mem.held != held:
                mem.subtask = self._sample([s for s in FEASIBLE[held] if s is not Subtask.IDLE])
        else:
            if mem.subtask is None or mem.steps_left <= 0 or mem.held != held or mem.subtask not in FEASIBLE[held]:
                mem.subtask = self._choose(obs)
                mem.steps_left = prof.commitment
            mem.steps_left -= 1
        mem.held = held
        act = _check_hold(mem, obs)
        if act is None:
            act = execute(obs.state, obs.agent, mem.subtask, prof.idle_station)
        return _finish(mem, obs, act, self.rng)


def teammate_act(
    ttype: TeammateType,
    obs: Observation,
    rng: np.random.Generator,
    agent: ScriptedTeammate | None = None,
) -> Action:
    """Action of a teammate of ``ttype``. Pass ``agent`` to keep commitment across calls."""
    if agent is None:
        agent = ScriptedTeammate(ttype, rng)
    return agent.act(obs)


# -- best responses --------------------------------------------------------


@dataclass(frozen=True)
class ResponseRole:
    onions: bool = True
    serve: bool = True
    trust_teammate: bool = True  # count the teammate's held items as work in progress
    mate_brings_onions: bool = False  # assume one more onion is always on its way
    plate_lead: int = 6  # fetch a plate once a pot has at most this many cook steps left
    prefetch_onion: bool = False
    wait_station: Tile | None = None


BEST_RESPONSE_ROLES: dict[TeammateType, ResponseRole] = {
    TeammateType.DEFAULT: ResponseRole(mate_brings_onions=True, prefetch_onion=True),
    TeammateType.POT_FOCUSED: ResponseRole(mate_brings_onions=True, plate_lead=12, wait_station=Tile.PLATE_PILE),
    TeammateType.PLATE_FOCUSED: ResponseRole(
        trust_teammate=False, mate_brings_onions=True, plate_lead=20, prefetch_onion=True
    ),
    TeammateType.SERVE_FOCUSED: ResponseRole(serve=False, mate_brings_onions=True, plate_lead=0, prefetch_onion=True),
    TeammateType.MIXED: ResponseRole(mate_brings_onions=True, prefetch_onion=True),
}


# Layout-specific replacements, calibrated against the pairing matrix. On the
# asymmetric kitchen the pot-focused mate already keeps both pots busy, so the
# best complement ignores what the mate carries and prefetches its own onions;
# against the default mate there it pays to leave serving to the mate.
LAYOUT_ROLES: dict[tuple[str, TeammateType], ResponseRole] = {
    ("asymmetric_advantage", TeammateType.POT_FOCUSED): BEST_RESPONSE_ROLES[TeammateType.PLATE_FOCUSED],
    ("asymmetric_advantage", TeammateType.DEFAULT): BEST_RESPONSE_ROLES[TeammateType.SERVE_FOCUSED],
}


def role_for(predicted: TeammateType, layout_name: str = "") -> ResponseRole:
    predicted = TeammateType(predicted)
    return LAYOUT_ROLES.get((layout_name, predicted), BEST_RESPONSE_ROLES[predicted])


class BestResponse:
    """Scripted complement to a teammate type."""

    def __init__(self, predicted: TeammateType, rng: np.random.Generator, role: ResponseRole | None = None):
        self.predicted = TeammateType(predicted)
        self.rng = rng
        self.role = role
        self.mem = _Memory()

    def _plan(self, obs: Observation) -> Action:
        state = obs.state
        if self.role is None:
            self.role = role_for(self.predicted, state.layout.name)
        role = self.role
        mate = obs.other
        held = obs.me.held
        if held is HeldItem.SOUP:
            return execute(state, obs.agent, Subtask.DELIVER)
        if held is HeldItem.ONION:
            return execute(state, obs.agent, Subtask.FILL_POT)
        if held is HeldItem.PLATE:
            return execute(state, obs.agent, Subtask.PLATE_SOUP)

        pots = [p for _, p in state.pots]
        mate_onion = role.trust_teammate and mate.held is HeldItem.ONION
        mate_plate = role.trust_teammate and mate.held in (HeldItem.PLATE, HeldItem.SOUP)
        onions_needed = sum(3 - p.onion_count for p in pots if p.accepts_onion)
        onions_needed -= int(mate_onion) + int(role.mate_brings_onions)
        due = sum(p.ready or 0 < p.cook_timer <= role.plate_lead for p in pots) - int(mate_plate)
        cooking = sum(p.ready or p.cooking for p in pots) - int(mate_plate)

        if role.serve and due > 0:
            return execute(state, obs.agent, Subtask.FETCH_PLATE)
        if role.onions and (onions_needed > 0 or role.prefetch_onion):
            return execute(state, obs.agent, Subtask.FETCH_ONION)
        if role.serve and cooking > 0:
            return execute(state, obs.agent, Subtask.FETCH_PLATE)
        if role.wait_station is not None:
            return stage_near(state, obs.agent, _stations(state, role.wait_station))
        return Action.STAY

    def act(self, obs: Observation) -> Action:
        _update_stuck(self.mem, obs)
        act = _check_hold(self.mem, obs)
        if act is None:
            act = self._plan(obs)
        return _finish(self.mem, obs, act, self.rng)


def best_response_act(
    predicted: TeammateType,
    obs: Observation,
    rng: np.random.Generator,
    agent: BestResponse | None = None,
) -> Action:
    if agent is None:
        agent = BestResponse(predicted, rng)
    return agent.act(obs)
