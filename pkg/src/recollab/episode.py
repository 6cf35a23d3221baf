"""Seeded episode stepping shared by database collection and evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, GridState, Layout, StepEvents, observe, reset, step
from .fingerprint import HistoryRecorder, ProbeHistory
from .policies import BestResponse, PolicyProfile, ScriptedTeammate, TeammateType


def teammate_rng(seed: int, ttype: TeammateType) -> np.random.Generator:
    return np.random.default_rng([seed, 1, int(ttype)])


def controlled_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2])


@dataclass
class Episode:
    """A teammate of a fixed type paired with a swappable controlled policy."""

    layout: Layout
    true_type: TeammateType
    cfg: EnvConfig
    seed: int
    start_policy: TeammateType = TeammateType.DEFAULT
    profile: PolicyProfile | None = None
    state: GridState = field(init=False)
    total_reward: float = field(init=False, default=0.0)
    deliveries: int = field(init=False, default=0)
    switches: list[tuple[int, TeammateType]] = field(init=False, default_factory=list)

    def __post_init__(self):
        self.state = reset(self.layout, self.cfg, self.seed)
        self.teammate = ScriptedTeammate(self.true_type, teammate_rng(self.seed, self.true_type), self.profile)
        self._crng = controlled_rng(self.seed)
        self.controlled = BestResponse(self.start_policy, self._crng)

    @property
    def t(self) -> int:
        return self.state.t

    @property
    def done(self) -> bool:
        return self.state.t >= self.cfg.horizon

    def route(self, predicted: TeammateType) -> None:
        """Swap the controlled agent to the best response for ``predicted``."""
        self.controlled = BestResponse(predicted, self._crng)
        self.switches.append((self.state.t, TeammateType(predicted)))

    def advance(self, recorder: HistoryRecorder | None = None) -> tuple[float, StepEvents]:
        prev = self.state
        a0 = self.teammate.act(observe(prev, 0))
        a1 = self.controlled.act(observe(prev, 1))
        self.state, reward, events = step(prev, a0, a1, self.cfg)
        self.total_reward += reward
        self.deliveries += sum(e.delivered for e in events)
        if recorder is not None:
            recorder.record(prev, a0, a1, reward, events[0])
        return reward, events[0]

    def probe(self, P: int) -> ProbeHistory:
        """Run ``P`` steps, recording what the teammate did."""
        rec = HistoryRecorder()
        for _ in range(P):
            self.advance(rec)
        return rec.history()

    def finish(self) -> None:
        while not self.done:
            self.advance()
