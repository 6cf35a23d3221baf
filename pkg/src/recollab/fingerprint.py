"""Behavior features over the probe window and mutual-information ranking.

Every feature describes the teammate (agent 0). Counts come from the
success flags the environment reports, dwell and held-item statistics from
the state the teammate acted in.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .env import (
    STATION_NAMES,
    STATIONS,
    Action,
    GridState,
    HeldItem,
    Observation,
    Layout,
    StepEvents,
    Tile,
)
from .policies import M, TeammateType

TEAMMATE = 0


class EmptyHistory(ValueError):
    pass


class UnknownFeature(KeyError):
    pass


@dataclass(frozen=True)
class ProbeStep:
    """One probe step: the state the teammate acted in and what happened."""

    obs: Observation
    teammate_action: Action
    controlled_action: Action
    reward: float
    events: StepEvents


@dataclass(frozen=True)
class ProbeHistory:
    steps: tuple[ProbeStep, ...]

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def probe_length(self) -> int:
        return len(self.steps)


class HistoryRecorder:
    """Accumulates probe steps while an episode runs."""

    def __init__(self):
        self._steps: list[ProbeStep] = []

    def record(self, state: GridState, a0: Action, a1: Action, reward: float, events: StepEvents) -> None:
        obs = Observation(state, TEAMMATE)
        self._steps.append(ProbeStep(obs, Action(a0), Action(a1), float(reward), events))

    def history(self) -> ProbeHistory:
        return ProbeHistory(tuple(self._steps))


_INTERACT_FLAG = {
    "OnionPile": "onion_pickup",
    "Pot": "pot_interaction",
    "PlatePile": "plate_pickup",
    "ServeWindow": "delivered",
}

FEATURES: tuple[str, ...] = (
    *(f"dwell_near_{STATION_NAMES[s]}" for s in STATIONS),
    *(f"action_frac_{a.label}" for a in Action),
    *(f"interact_count_{STATION_NAMES[s]}" for s in STATIONS),
    "handoff_count",
    "blocked_count",
    "cumulative_reward",
    *(f"held_frac_{h.label}" for h in HeldItem),
)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURES)}


@dataclass(frozen=True)
class Fingerprint:
    """Feature values in catalog order."""

    values: tuple[float, ...]
    probe_length: int
    names: tuple[str, ...] = FEATURES

    def __post_init__(self):
        if len(self.values) != len(self.names):
            raise ValueError("fingerprint needs one value per feature")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("fingerprint values must be finite")

    @property
    def features(self) -> list[tuple[str, float]]:
        return list(zip(self.names, self.values))

    def __getitem__(self, name: str) -> float:
        try:
            return self.values[self.names.index(name)]
        except ValueError:
            raise UnknownFeature(name) from None

    def vector(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self[n] for n in names], dtype=float)

    def to_dict(self) -> dict:
        return {"probe_length": self.probe_length, "features": dict(self.features)}

    @classmethod
    def from_dict(cls, d: dict) -> "Fingerprint":
        feats = d["features"]
        return cls(tuple(float(v) for v in feats.values()), int(d["probe_length"]), tuple(feats))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@lru_cache(maxsize=64)
def _near_cells(layout: Layout) -> dict[Tile, frozenset]:
    """Cells within Chebyshev distance 1 of each station kind."""
    out = {}
    for kind in STATIONS:
        out[kind] = frozenset(
            (r + dr, c + dc)
            for r, c in layout.cells_by_tile[kind]
            for dr in (-1, 0, 1)
            for dc in (-1, 0, 1)
        )
    return out


def extract_features(history: ProbeHistory) -> Fingerprint:
    """Compute every catalog feature for the teammate over ``history``."""
    if len(history) == 0:
        raise EmptyHistory("probe history is empty")
    P = len(history)
    dwell = dict.fromkeys(STATIONS, 0)
    actions = np.zeros(len(Action))
    held = np.zeros(len(HeldItem))
    interacts = dict.fromkeys(_INTERACT_FLAG, 0)
    handoffs = blocked = 0
    reward = 0.0
    for s in history.steps:
        me = s.obs.state.agents[TEAMMATE]
        near = _near_cells(s.obs.state.layout)
        for kind in STATIONS:
            dwell[kind] += me.pos in near[kind]
        actions[int(s.teammate_action)] += 1
        held[int(me.held)] += 1
        for name, flag in _INTERACT_FLAG.items():
            interacts[name] += getattr(s.events, flag)
        handoffs += s.events.handoff
        blocked += s.events.blocked
        reward += s.reward
    values = (
        *(float(dwell[k]) for k in STATIONS),
        *(actions / P).tolist(),
        *(float(interacts[STATION_NAMES[k]]) for k in STATIONS),
        float(handoffs),
        float(blocked),
        reward,
        *(held / P).tolist(),
    )
    return Fingerprint(tuple(values), P)


def discretize(values: np.ndarray, bins: int) -> np.ndarray:
    """Equal-frequency bin index per value, using quantile cut points.

    Repeated cut points collapse, so heavily tied features get fewer bins.
    """
    values = np.asarray(values, dtype=float)
    if bins < 2:
        raise ValueError("need at least two bins")
    qs = np.quantile(values, np.arange(1, bins) / bins)
    cuts = np.unique(qs)
    return np.searchsorted(cuts, values, side="left")


def mutual_information(x: Sequence[int], y: Sequence[int]) -> float:
    """Plug-in mutual information (nats) of two discrete sequences."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.size == 0:
        raise ValueError("need two nonempty sequences of equal length")
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    joint = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(joint, (xi, yi), 1.0)
    joint /= x.size
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))
    return max(mi, 0.0)


Dataset = Sequence[tuple[Fingerprint, TeammateType]]


def feature_column(dataset: Dataset, feature: str) -> np.ndarray:
    if feature not in FEATURE_INDEX and (not dataset or feature not in dataset[0][0].names):
        raise UnknownFeature(feature)
    return np.array([fp[feature] for fp, _ in dataset], dtype=float)


def estimate_mi(dataset: Dataset, feature: str, bins: int = 8) -> float:
    if not dataset:
        raise ValueError("dataset is empty")
    col = feature_column(dataset, feature)
    labels = [int(t) for _, t in dataset]
    return mutual_information(discretize(col, bins), labels)


def rank_features(dataset: Dataset, bins: int = 8, names: Iterable[str] = FEATURES) -> list[tuple[str, float]]:
    """All features with their MI, best first; equal scores keep catalog order."""
    scored = [(n, estimate_mi(dataset, n, bins)) for n in names]
    # rounding keeps float noise from reordering features with equal information
    return sorted(scored, key=lambda p: -round(p[1], 12))


def select_features(dataset: Dataset, r: int = 8, bins: int = 8) -> list[str]:
    if not 1 <= r <= len(FEATURES):
        raise ValueError(f"r must be in [1, {len(FEATURES)}]")
    return [n for n, _ in rank_features(dataset, bins)[:r]]


def mi_upper_bound(bins: int) -> float:
    return min(math.log(bins), math.log(M))


@lru_cache(maxsize=64)
def _nearest_station(layout: Layout) -> dict:
    out = {}
    for r, c in layout.floor:
        best = None
        for k, kind in enumerate(STATIONS):
            d = min(abs(r - sr) + abs(c - sc) for sr, sc in layout.cells_by_tile[kind])
            if best is None or d < best[0]:
                best = (d, k)
        out[(r, c)] = best[1]
    return out


N_ABSTRACT = len(STATIONS) * len(HeldItem)


def abstract_state(obs: Observation) -> int:
    """Coarse teammate state: nearest station kind (Manhattan, catalog order on ties) and held item."""
    me = obs.state.agents[TEAMMATE]
    kind = _nearest_station(obs.state.layout)[me.pos]
    return kind * len(HeldItem) + int(me.held)


def probe_trace(history: ProbeHistory) -> list[tuple[int, int]]:
    """(abstract state, teammate action) per probe step."""
    return [(abstract_state(s.obs), int(s.teammate_action)) for s in history.steps]
