"""Deterministic two-agent Overcooked-style kitchen.

Agent index 0 is the teammate, agent index 1 is the controlled agent. In
layout files they are marked ``1`` and ``2`` respectively.

Layout characters::

    W   wall / counter (items can be placed on it)
    ' ' floor
    O   onion pile
    D   plate (dish) pile
    P   pot
    X   serving window
    1,2 start cells (floor) of agent 0 and agent 1

Every station is an infinite dispenser or fixed appliance; the only
ingredient is onion and every soup takes three of them.
"""
from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable

Cell = tuple[int, int]


class Tile(enum.Enum):
    WALL = "W"
    FLOOR = " "
    ONION_PILE = "O"
    PLATE_PILE = "D"
    POT = "P"
    SERVE_WINDOW = "X"


STATIONS = (Tile.ONION_PILE, Tile.POT, Tile.PLATE_PILE, Tile.SERVE_WINDOW)
STATION_NAMES = {
    Tile.ONION_PILE: "OnionPile",
    Tile.POT: "Pot",
    Tile.PLATE_PILE: "PlatePile",
    Tile.SERVE_WINDOW: "ServeWindow",
}


class Action(enum.IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3
    STAY = 4
    INTERACT = 5

    @property
    def label(self) -> str:
        return self.name.capitalize()


MOVES = (Action.NORTH, Action.SOUTH, Action.EAST, Action.WEST)
DELTAS = {
    Action.NORTH: (-1, 0),
    Action.SOUTH: (1, 0),
    Action.EAST: (0, 1),
    Action.WEST: (0, -1),
}


class HeldItem(enum.IntEnum):
    NOTHING = 0
    ONION = 1
    PLATE = 2
    SOUP = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()


class LayoutError(ValueError):
    pass


class NonRectangular(LayoutError):
    pass


class UnknownChar(LayoutError):
    pass


class MissingStation(LayoutError):
    def __init__(self, kind: Tile):
        super().__init__(f"layout has no {STATION_NAMES[kind]}")
        self.kind = kind


class WrongAgentCount(LayoutError):
    pass


class EpisodeOver(RuntimeError):
    pass


def add(cell: Cell, delta: Cell) -> Cell:
    return (cell[0] + delta[0], cell[1] + delta[1])


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


@dataclass(frozen=True)
class Layout:
    name: str
    grid: tuple[tuple[Tile, ...], ...]
    start_positions: tuple[Cell, Cell]

    def __hash__(self) -> int:
        return self._hash

    @cached_property
    def _hash(self) -> int:
        return hash((self.name, self.grid, self.start_positions))

    @property
    def height(self) -> int:
        return len(self.grid)

    @property
    def width(self) -> int:
        return len(self.grid[0])

    def tile(self, cell: Cell) -> Tile:
        r, c = cell
        if 0 <= r < self.height and 0 <= c < self.width:
            return self.grid[r][c]
        return Tile.WALL

    @cached_property
    def cells_by_tile(self) -> dict[Tile, tuple[Cell, ...]]:
        out: dict[Tile, list[Cell]] = {t: [] for t in Tile}
        for r, row in enumerate(self.grid):
            for c, t in enumerate(row):
                out[t].append((r, c))
        return {t: tuple(v) for t, v in out.items()}

    @cached_property
    def floor(self) -> frozenset[Cell]:
        return frozenset(self.cells_by_tile[Tile.FLOOR])

    @property
    def pots(self) -> tuple[Cell, ...]:
        return self.cells_by_tile[Tile.POT]

    def to_text(self) -> str:
        rows = []
        for r, row in enumerate(self.grid):
            chars = [t.value for t in row]
            for i, pos in enumerate(self.start_positions):
                if pos[0] == r:
                    chars[pos[1]] = str(i + 1)
            rows.append("".join(chars))
        return "\n".join(rows) + "\n"


def load_layout(text: str, name: str = "custom") -> Layout:
    lines = text.split("\n")
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise NonRectangular("empty layout")
    width = len(lines[0])
    if width == 0 or any(len(line) != width for line in lines):
        raise NonRectangular(f"rows have unequal lengths: {[len(x) for x in lines]}")

    chars = {t.value: t for t in Tile}
    starts: dict[str, Cell] = {}
    grid = []
    for r, line in enumerate(lines):
        row = []
        for c, ch in enumerate(line):
            if ch in ("1", "2"):
                if ch in starts:
                    raise WrongAgentCount(f"agent marker {ch!r} appears more than once")
                starts[ch] = (r, c)
                row.append(Tile.FLOOR)
            elif ch in chars:
                row.append(chars[ch])
            else:
                raise UnknownChar(f"unknown character {ch!r} at row {r}, col {c}")
        grid.append(tuple(row))

    if sorted(starts) != ["1", "2"]:
        raise WrongAgentCount(f"expected agents 1 and 2, found {sorted(starts)}")
    present = {t for row in grid for t in row}
    for kind in STATIONS:
        if kind not in present:
            raise MissingStation(kind)
    height = len(grid)
    for r, row in enumerate(grid):
        for c, t in enumerate(row):
            on_edge = r in (0, height - 1) or c in (0, width - 1)
            if on_edge and (t is Tile.FLOOR or (r, c) in starts.values()):
                raise LayoutError(f"floor cell on the boundary at ({r}, {c})")
    return Layout(name=name, grid=tuple(grid), start_positions=(starts["1"], starts["2"]))


LAYOUT_NAMES = ("cramped_room", "asymmetric_advantage", "coordination_ring")


def builtin_layout(name: str) -> Layout:
    path = resources.files("recollab").joinpath("data", "layouts", f"{name}.layout")
    if not path.is_file():
        raise KeyError(f"no built-in layout named {name!r}; available: {', '.join(LAYOUT_NAMES)}")
    return load_layout(path.read_text(encoding="utf-8"), name=name)


def layout_from_file(path: str | Path) -> Layout:
    path = Path(path)
    return load_layout(path.read_text(encoding="utf-8"), name=path.stem)


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 400
    reward_per_delivery: float = 20.0
    cook_time: int = 20
    gamma: float = 1.0
    handoff_window: int = 10

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.reward_per_delivery <= 0:
            raise ValueError("reward_per_delivery must be positive")
        if self.cook_time < 1:
            raise ValueError("cook_time must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.handoff_window < 0:
            raise ValueError("handoff_window must be >= 0")


@dataclass(frozen=True)
class AgentState:
    pos: Cell
    facing: Action = Action.NORTH
    held: HeldItem = HeldItem.NOTHING


@dataclass(frozen=True)
class PotState:
    onion_count: int = 0
    cook_timer: int = 0
    ready: bool = False

    @property
    def accepts_onion(self) -> bool:
        return self.onion_count < 3 and self.cook_timer == 0 and not self.ready

    @property
    def cooking(self) -> bool:
        return self.cook_timer > 0


@dataclass(frozen=True)
class Placement:
    """An item put on a counter, remembered for handoff detection."""

    cell: Cell
    placer: int
    t: int
    near_other: bool


@dataclass(frozen=True)
class GridState:
    layout: Layout
    agents: tuple[AgentState, AgentState]
    pots: tuple[tuple[Cell, PotState], ...]
    t: int = 0
    counters: tuple[tuple[Cell, HeldItem], ...] = ()
    placements: tuple[Placement, ...] = ()
    seed: int = 0

    def pot(self, cell: Cell) -> PotState:
        for c, p in self.pots:
            if c == cell:
                return p
        raise KeyError(cell)

    def counter_item(self, cell: Cell) -> HeldItem:
        for c, item in self.counters:
            if c == cell:
                return item
        return HeldItem.NOTHING

    def facing_cell(self, agent: int) -> Cell:
        a = self.agents[agent]
        return add(a.pos, DELTAS[a.facing])


@dataclass(frozen=True)
class StepEvents:
    delivered: bool = False
    pot_interaction: bool = False
    plate_pickup: bool = False
    onion_pickup: bool = False
    blocked: bool = False
    handoff: bool = False


NO_EVENTS = StepEvents()


@dataclass(frozen=True)
class Observation:
    """Full-state observation tagged with the observer's index."""

    state: GridState
    agent: int

    @property
    def me(self) -> AgentState:
        return self.state.agents[self.agent]

    @property
    def other(self) -> AgentState:
        return self.state.agents[1 - self.agent]


def reset(layout: Layout, cfg: EnvConfig, seed: int = 0) -> GridState:
    agents = tuple(AgentState(pos=p) for p in layout.start_positions)
    pots = tuple((cell, PotState()) for cell in layout.pots)
    return GridState(layout=layout, agents=agents, pots=pots, t=0, seed=seed)


def observe(state: GridState, agent: int) -> Observation:
    if agent not in (0, 1):
        raise ValueError("agent must be 0 or 1")
    return Observation(state=state, agent=agent)


def _resolve_moves(state: GridState, actions: tuple[Action, Action]) -> tuple[list[Cell], list[bool]]:
    layout = state.layout
    cur = [a.pos for a in state.agents]
    target = list(cur)
    blocked = [False, False]
    moving = [False, False]
    for i, act in enumerate(actions):
        if act in DELTAS:
            nxt = add(cur[i], DELTAS[act])
            tile = layout.tile(nxt)
            if tile is Tile.FLOOR:
                target[i] = nxt
                moving[i] = True
            elif tile is Tile.WALL:
                blocked[i] = True
    if moving[0] and moving[1]:
        same_cell = target[0] == target[1]
        swap = target[0] == cur[1] and target[1] == cur[0]
        if same_cell or swap:
            return cur, [True, True]
    # moving into a cell the other agent keeps occupying
    for i in (0, 1):
        j = 1 - i
        if moving[i] and target[i] == cur[j] and not moving[j]:
            target[i] = cur[i]
            blocked[i] = True
    for i in (0, 1):
        j = 1 - i
        if target[i] == target[j]:
            # the other agent's move failed and it stayed where i wanted to go
            target[i] = cur[i]
            blocked[i] = True
    return target, blocked


def step(
    state: GridState, a0: Action, a1: Action, cfg: EnvConfig
) -> tuple[GridState, float, tuple[StepEvents, StepEvents]]:
    if state.t >= cfg.horizon:
        raise EpisodeOver(f"episode finished at t={state.t}")
    actions = (Action(a0), Action(a1))
    layout = state.layout

    # pots cook before this step's interactions
    pots = {}
    for cell, p in state.pots:
        if p.cook_timer > 0:
            timer = p.cook_timer - 1
            p = PotState(onion_count=p.onion_count, cook_timer=timer, ready=timer == 0)
        pots[cell] = p
    counters = dict(state.counters)
    placements = [p for p in state.placements if state.t - p.t <= cfg.handoff_window]

    new_pos, blocked = _resolve_moves(state, actions)
    agents = []
    for i, act in enumerate(actions):
        a = state.agents[i]
        facing = act if act in DELTAS else a.facing
        agents.append(AgentState(pos=new_pos[i], facing=facing, held=a.held))

    flags = [dict(blocked=blocked[i]) for i in (0, 1)]
    reward = 0.0
    for i, act in enumerate(actions):
        if act is not Action.INTERACT:
            continue
        a = agents[i]
        front = add(a.pos, DELTAS[a.facing])
        tile = layout.tile(front)
        held = a.held
        if tile is Tile.ONION_PILE and held is HeldItem.NOTHING:
            held = HeldItem.ONION
            flags[i]["onion_pickup"] = True
        elif tile is Tile.PLATE_PILE and held is HeldItem.NOTHING:
            held = HeldItem.PLATE
            flags[i]["plate_pickup"] = True
        elif tile is Tile.POT:
            pot = pots[front]
            if held is HeldItem.ONION and pot.accepts_onion:
                n = pot.onion_count + 1
                pots[front] = PotState(onion_count=n, cook_timer=cfg.cook_time if n == 3 else 0)
                held = HeldItem.NOTHING
                flags[i]["pot_interaction"] = True
            elif held is HeldItem.PLATE and pot.ready:
                pots[front] = PotState()
                held = HeldItem.SOUP
                flags[i]["pot_interaction"] = True
        elif tile is Tile.SERVE_WINDOW and held is HeldItem.SOUP:
            held = HeldItem.NOTHING
            reward += cfg.reward_per_delivery
            flags[i]["delivered"] = True
        elif tile is Tile.WALL and 0 <= front[0] < layout.height and 0 <= front[1] < layout.width:
            on_counter = counters.get(front, HeldItem.NOTHING)
            other = agents[1 - i]
            if held is not HeldItem.NOTHING and on_counter is HeldItem.NOTHING:
                counters[front] = held
                held = HeldItem.NOTHING
                near = chebyshev(front, other.pos) <= 1
                placements = [p for p in placements if p.cell != front]
                placements.append(Placement(cell=front, placer=i, t=state.t, near_other=near))
            elif held is HeldItem.NOTHING and on_counter is not HeldItem.NOTHING:
                held = on_counter
                del counters[front]
                for p in placements:
                    if p.cell == front and p.placer != i and p.near_other:
                        flags[0]["handoff"] = flags[1]["handoff"] = True
                placements = [p for p in placements if p.cell != front]
        if held is not a.held:
            agents[i] = dataclasses.replace(a, held=held)

    new_state = GridState(
        layout=layout,
        agents=(agents[0], agents[1]),
        pots=tuple(sorted(pots.items())),
        t=state.t + 1,
        counters=tuple(sorted(counters.items())),
        placements=tuple(placements),
        seed=state.seed,
    )
    events = (StepEvents(**flags[0]), StepEvents(**flags[1]))
    return new_state, reward, events


def render(state: GridState) -> str:
    """ASCII dump; agents drawn as 1/2, counter items as lowercase o/d/s."""
    item_chars = {HeldItem.ONION: "o", HeldItem.PLATE: "d", HeldItem.SOUP: "s"}
    rows = [[t.value for t in row] for row in state.layout.grid]
    for cell, item in state.counters:
        rows[cell[0]][cell[1]] = item_chars[item]
    for i, a in enumerate(state.agents):
        rows[a.pos[0]][a.pos[1]] = str(i + 1)
    lines = ["".join(r) for r in rows]
    for i, a in enumerate(state.agents):
        lines.append(f"agent{i}: pos={a.pos} facing={a.facing.label} held={a.held.label}")
    for cell, p in state.pots:
        lines.append(f"pot{cell}: onions={p.onion_count} timer={p.cook_timer} ready={p.ready}")
    lines.append(f"t={state.t}")
    return "\n".join(lines)


def check_invariants(state: GridState, cfg: EnvConfig) -> None:
    """Raise AssertionError when a state breaks a structural invariant."""
    a, b = state.agents
    floor = state.layout.floor
    assert a.pos != b.pos, "agents share a cell"
    assert a.pos in floor and b.pos in floor, "agent off the floor"
    for _, p in state.pots:
        assert 0 <= p.onion_count <= 3
        assert p.cook_timer >= 0
        if p.cook_timer > 0:
            assert p.onion_count == 3
        if p.ready:
            assert p.cook_timer == 0 and p.onion_count == 3
    assert 0 <= state.t <= cfg.horizon


# -- serialization ---------------------------------------------------------


def state_to_dict(state: GridState) -> dict:
    return {
        "layout": {"name": state.layout.name, "text": state.layout.to_text()},
        "agents": [
            {"pos": list(a.pos), "facing": a.facing.name, "held": a.held.name} for a in state.agents
        ],
        "pots": [
            {"cell": list(c), "onion_count": p.onion_count, "cook_timer": p.cook_timer, "ready": p.ready}
            for c, p in state.pots
        ],
        "counters": [{"cell": list(c), "item": i.name} for c, i in state.counters],
        "placements": [
            {"cell": list(p.cell), "placer": p.placer, "t": p.t, "near_other": p.near_other}
            for p in state.placements
        ],
        "t": state.t,
        "seed": state.seed,
    }


def state_from_dict(d: dict, layout: Layout | None = None) -> GridState:
    if layout is None:
        layout = load_layout(d["layout"]["text"], name=d["layout"]["name"])
    return GridState(
        layout=layout,
        agents=tuple(
            AgentState(pos=tuple(a["pos"]), facing=Action[a["facing"]], held=HeldItem[a["held"]])
            for a in d["agents"]
        ),
        pots=tuple(
            (tuple(p["cell"]), PotState(p["onion_count"], p["cook_timer"], p["ready"])) for p in d["pots"]
        ),
        counters=tuple((tuple(c["cell"]), HeldItem[c["item"]]) for c in d["counters"]),
        placements=tuple(
            Placement(tuple(p["cell"]), p["placer"], p["t"], p["near_other"]) for p in d["placements"]
        ),
        t=d["t"],
        seed=d["seed"],
    )


def observation_to_json(obs: Observation) -> str:
    return json.dumps({"agent": obs.agent, "state": state_to_dict(obs.state)}, sort_keys=True)


def observation_from_json(text: str) -> Observation:
    d = json.loads(text)
    return Observation(state=state_from_dict(d["state"]), agent=d["agent"])


def events_to_dict(ev: StepEvents) -> dict:
    return dataclasses.asdict(ev)


def rollout(
    layout: Layout,
    cfg: EnvConfig,
    actions: Iterable[tuple[Action, Action]],
    seed: int = 0,
) -> tuple[list[GridState], list[float], list[tuple[StepEvents, StepEvents]]]:
    """Replay a fixed joint-action sequence; returns states (incl. initial), rewards, events."""
    state = reset(layout, cfg, seed)
    states, rewards, events = [state], [], []
    for a0, a1 in actions:
        state, r, ev = step(state, a0, a1, cfg)
        states.append(state)
        rewards.append(r)
        events.append(ev)
    return states, rewards, events
