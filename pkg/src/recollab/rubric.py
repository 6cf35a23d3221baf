"""Per-type behavior prototypes and their text renderings.

All templates are fixed string constants so prompts stay byte-stable across
runs; bump ``TEMPLATE_VERSION`` whenever any wording changes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .fingerprint import Dataset, Fingerprint, UnknownFeature
from .policies import TYPES, TeammateType

TEMPLATE_VERSION = "rubric-text/1"
SCHEMA_VERSION = 1


class InsufficientSamples(ValueError):
    def __init__(self, ttype: TeammateType, n: int):
        super().__init__(f"{ttype.key}: need at least 2 episodes, got {n}")
        self.ttype = ttype


_STATION_WORDS = {
    "OnionPile": "onion pile",
    "Pot": "pot",
    "PlatePile": "plate pile",
    "ServeWindow": "serving window",
}
_ACTION_WORDS = {
    "North": "moving north",
    "South": "moving south",
    "East": "moving east",
    "West": "moving west",
    "Stay": "standing still",
    "Interact": "interacting",
}

_ITEM_WORDS = {"Nothing": "nothing", "Onion": "an onion", "Plate": "a plate", "Soup": "a soup"}


def _human(name: str) -> tuple[str, str]:
    """(human-readable name, unit) for a catalog feature."""
    kind, _, arg = name.rpartition("_")
    if kind == "dwell_near":
        return f"time spent adjacent to {_STATION_WORDS[arg]}", "steps"
    if kind == "action_frac":
        return f"share of steps {_ACTION_WORDS[arg]}", "fraction"
    if kind == "interact_count":
        return f"successful interactions with {_STATION_WORDS[arg]}", "count"
    if kind == "held_frac":
        return f"share of steps holding {_ITEM_WORDS[arg]}", "fraction"
    fixed = {
        "handoff_count": ("counter handoffs between the agents", "count"),
        "blocked_count": ("moves blocked by the other agent or a wall", "count"),
        "cumulative_reward": ("team reward collected", "points"),
    }
    if name in fixed:
        return fixed[name]
    raise UnknownFeature(name)


def human_name(name: str) -> str:
    return _human(name)[0]


def unit(name: str) -> str:
    return _human(name)[1]


TYPE_TITLES = {
    TeammateType.DEFAULT: "default",
    TeammateType.POT_FOCUSED: "pot_focused",
    TeammateType.PLATE_FOCUSED: "plate_focused",
    TeammateType.SERVE_FOCUSED: "serve_focused",
    TeammateType.MIXED: "mixed",
}
TYPE_GLOSSES = {
    TeammateType.DEFAULT: "Takes on every stage of the recipe with no standing preference.",
    TeammateType.POT_FOCUSED: "Prioritizes placing onions in the pot.",
    TeammateType.PLATE_FOCUSED: "Prioritizes fetching plates and tends to wait near the plate pile.",
    TeammateType.SERVE_FOCUSED: "Prioritizes plating finished soup and carrying it to the serving window.",
    TeammateType.MIXED: "Rotates through all subtasks on a fixed cycle instead of specializing.",
}


def fmt(x: float) -> str:
    out = f"{x:.3f}"
    return "0.000" if out == "-0.000" else out


@dataclass(frozen=True)
class Rubric:
    selected: tuple[str, ...]
    # per type, one (mean, std) row per selected feature
    prototypes: Mapping[TeammateType, tuple[tuple[float, float], ...]]
    counts: Mapping[TeammateType, int]

    def means(self, ttype: TeammateType) -> np.ndarray:
        return np.array([m for m, _ in self.prototypes[ttype]])

    def stds(self, ttype: TeammateType) -> np.ndarray:
        return np.array([s for _, s in self.prototypes[ttype]])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "template_version": TEMPLATE_VERSION,
            "selected_features": list(self.selected),
            "prototypes": {
                t.key: [{"feature": f, "mean": m, "std": s} for f, (m, s) in zip(self.selected, self.prototypes[t])]
                for t in TYPES
            },
            "source_episode_count": {t.key: self.counts[t] for t in TYPES},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Rubric":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported rubric schema {d.get('schema_version')!r}")
        selected = tuple(d["selected_features"])
        protos = {}
        for t in TYPES:
            rows = d["prototypes"][t.key]
            if [r["feature"] for r in rows] != list(selected):
                raise ValueError(f"rubric rows for {t.key} do not match the selected features")
            protos[t] = tuple((float(r["mean"]), float(r["std"])) for r in rows)
        counts = {t: int(d["source_episode_count"][t.key]) for t in TYPES}
        return cls(selected, protos, counts)

    @classmethod
    def from_json(cls, text: str) -> "Rubric":
        return cls.from_dict(json.loads(text))


def build_rubric(dataset: Dataset, selected: Sequence[str]) -> Rubric:
    """Mean and population std of each selected feature, per type."""
    selected = tuple(selected)
    protos, counts = {}, {}
    for t in TYPES:
        rows = np.array([fp.vector(selected) for fp, lab in dataset if lab == t]).reshape(-1, len(selected))
        if len(rows) < 2:
            raise InsufficientSamples(t, len(rows))
        mu = rows.mean(axis=0)
        sigma = rows.std(axis=0)
        protos[t] = tuple(zip(mu.tolist(), sigma.tolist()))
        counts[t] = len(rows)
    return Rubric(selected, protos, counts)


def describe(fp: Fingerprint, selected: Sequence[str]) -> str:
    """One line per selected feature, prefixed by the probe length."""
    lines = [f"Probe window: {fp.probe_length} steps."]
    for name in selected:
        lines.append(f"{human_name(name)}: {fmt(fp[name])} ({unit(name)})")
    return "\n".join(lines) + "\n"


def rubric_to_text(rubric: Rubric) -> str:
    blocks = []
    for t in TYPES:
        lines = [f"Type {TYPE_TITLES[t]}: {TYPE_GLOSSES[t]}"]
        for name, (m, s) in zip(rubric.selected, rubric.prototypes[t]):
            lines.append(f"- {human_name(name)}: μ={fmt(m)}, σ={fmt(s)}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
