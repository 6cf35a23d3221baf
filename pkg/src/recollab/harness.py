"""Probe, classify once, route: episode runner, evaluation tables and ablations."""
from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .classify import (
    ClassificationResult,
    LogRegModel,
    classify_collab,
    classify_oracle,
    classify_plastic,
    classify_prototype,
    classify_random,
    classify_recollab,
    fit_likelihoods,
    fit_logreg,
    mock_client,
    predict_logreg,
)
from .env import EnvConfig, Layout
from .episode import Episode
from .fingerprint import Fingerprint, ProbeHistory, extract_features
from .llm_client import LlmClient
from .policies import M, TYPES, PolicyProfile, TeammateType
from .retrieval import TrajectoryDB, collect_database
from .rubric import Rubric

METHODS = ("collab", "recollab", "prototype", "plastic", "logreg", "random", "static", "oracle")
DB_SEEDS = range(0, 10)
EVAL_SEED_BASE = 100


class SeedOverlap(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeResult:
    method: str
    layout: str
    true_type: TeammateType
    predicted_type: TeammateType
    confidence: float
    fallback_used: bool
    switch_step: int
    episodic_return: float
    deliveries: int
    seed: int
    seed_group: int = 0
    classifier_calls: int = 1
    prompt_hash: str | None = None

    @property
    def correct(self) -> bool:
        return self.true_type == self.predicted_type

    def to_dict(self) -> dict:
        d = asdict(self)
        d["true_type"] = self.true_type.key
        d["predicted_type"] = self.predicted_type.key
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        d = dict(d)
        d["true_type"] = TeammateType.parse(d["true_type"])
        d["predicted_type"] = TeammateType.parse(d["predicted_type"])
        return cls(**d)


@dataclass
class Pipeline:
    """Everything the classifiers need for one layout."""

    rubric: Rubric
    db: TrajectoryDB
    llm: LlmClient = field(default_factory=mock_client)
    k: int = 5
    logreg_epochs: int = 500
    logreg_lr: float = 0.1
    logreg_l2: float = 1e-4

    @cached_property
    def logreg(self) -> LogRegModel:
        return fit_logreg(self.db.dataset(), self.rubric.selected, self.logreg_epochs, self.logreg_lr, self.logreg_l2)

    @cached_property
    def likelihoods(self) -> np.ndarray:
        return fit_likelihoods(self.db.records)


@dataclass(frozen=True)
class Classifier:
    name: str
    fn: Callable[[ProbeHistory, Fingerprint, TeammateType, np.random.Generator], ClassificationResult]

    def __call__(self, history, fp, true_type, rng) -> ClassificationResult:
        return self.fn(history, fp, true_type, rng)


def make_classifier(method: str, pipe: Pipeline | None = None) -> Classifier:
    if method == "oracle":
        return Classifier(method, lambda h, fp, t, rng: classify_oracle(t))
    if method == "random":
        return Classifier(method, lambda h, fp, t, rng: classify_random(rng))
    if method == "static":
        static = ClassificationResult(TeammateType.DEFAULT, 1.0, "always the default best response", "static")
        return Classifier(method, lambda h, fp, t, rng: static)
    if pipe is None:
        raise ValueError(f"method {method!r} needs a fitted pipeline")
    if method == "prototype":
        return Classifier(method, lambda h, fp, t, rng: classify_prototype(fp, pipe.rubric))
    if method == "collab":
        return Classifier(method, lambda h, fp, t, rng: classify_collab(fp, pipe.rubric, pipe.llm))
    if method == "recollab":
        return Classifier(method, lambda h, fp, t, rng: classify_recollab(fp, pipe.rubric, pipe.db, pipe.k, pipe.llm))
    if method == "logreg":
        return Classifier(method, lambda h, fp, t, rng: predict_logreg(pipe.logreg, fp))
    if method == "plastic":
        return Classifier(method, lambda h, fp, t, rng: classify_plastic(h, pipe.likelihoods))
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def classifier_rng(seed: int, layout_name: str = "") -> np.random.Generator:
    # layouts share evaluation seeds; keying on the name keeps their draws independent
    return np.random.default_rng([seed, 3, zlib.crc32(layout_name.encode())])


def run_episode(
    layout: Layout,
    true_type: TeammateType,
    classifier: Classifier,
    P: int,
    cfg: EnvConfig | None = None,
    seed: int = 0,
    profile: PolicyProfile | None = None,
    seed_group: int = 0,
) -> EpisodeResult:
    """Probe with the default best response, classify once at t=P, then route.

    The oracle skips the probe and plays the true type's best response from
    t=0. Routing to the policy already in control keeps it running untouched.
    """
    cfg = cfg or EnvConfig()
    true_type = TeammateType(true_type)
    if not 0 < P < cfg.horizon:
        raise ValueError(f"probe length must be in (0, {cfg.horizon})")
    if classifier.name == "oracle":
        res = classify_oracle(true_type)
        ep = Episode(layout, true_type, cfg, seed, start_policy=true_type, profile=profile)
        ep.switches.append((0, true_type))
        switch = 0
    else:
        ep = Episode(layout, true_type, cfg, seed, profile=profile)
        hist = ep.probe(P)
        res = classifier(hist, extract_features(hist), true_type, classifier_rng(seed, layout.name))
        if res.predicted != ep.controlled.predicted:
            ep.route(res.predicted)
        else:
            ep.switches.append((ep.t, res.predicted))
        switch = P
    ep.finish()
    return EpisodeResult(
        method=classifier.name,
        layout=layout.name,
        true_type=true_type,
        predicted_type=res.predicted,
        confidence=res.confidence,
        fallback_used=res.fallback_used,
        switch_step=switch,
        episodic_return=ep.total_reward,
        deliveries=ep.deliveries,
        seed=seed,
        seed_group=seed_group,
        classifier_calls=len(ep.switches),
        prompt_hash=res.prompt_hash,
    )


def eval_seeds(seed_groups: int, seed_base: int = EVAL_SEED_BASE) -> list[list[tuple[int, TeammateType]]]:
    """Stratified schedule: each seed group holds one episode per type."""
    return [[(seed_base + g * M + int(t), t) for t in TYPES] for g in range(seed_groups)]


def check_seed_hygiene(eval_seeds: Iterable[int], db_seeds: Iterable[int]) -> None:
    overlap = set(eval_seeds) & set(db_seeds)
    if overlap:
        raise SeedOverlap(f"evaluation reuses database seeds {sorted(overlap)[:5]}")


@dataclass(frozen=True)
class MethodSummary:
    method: str
    layout: str
    accuracy_mean: float
    accuracy_std: float
    return_mean: float
    return_std: float
    episodes: int
    confusion: tuple[tuple[int, ...], ...]  # rows: true type, columns: predicted type
    fallbacks: int = 0

    @property
    def accuracy(self) -> float:
        c = np.array(self.confusion)
        return float(np.trace(c) / c.sum())

    def to_row(self) -> dict:
        return {
            "method": self.method,
            "layout": self.layout,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "return_mean": self.return_mean,
            "return_std": self.return_std,
            "episodes": self.episodes,
            "fallbacks": self.fallbacks,
        }


def summarize(results: Sequence[EpisodeResult]) -> MethodSummary:
    """Mean ± std across seed groups; returns are averaged within a group first."""
    if not results:
        raise ValueError("no episodes to summarize")
    groups: dict[int, list[EpisodeResult]] = {}
    for r in results:
        groups.setdefault(r.seed_group, []).append(r)
    acc = np.array([np.mean([r.correct for r in g]) for g in groups.values()])
    ret = np.array([np.mean([r.episodic_return for r in g]) for g in groups.values()])
    conf = np.zeros((M, M), dtype=int)
    for r in results:
        conf[int(r.true_type), int(r.predicted_type)] += 1
    return MethodSummary(
        method=results[0].method,
        layout=results[0].layout,
        accuracy_mean=float(acc.mean()),
        accuracy_std=float(acc.std()),
        return_mean=float(ret.mean()),
        return_std=float(ret.std()),
        episodes=len(results),
        confusion=tuple(tuple(int(x) for x in row) for row in conf),
        fallbacks=sum(r.fallback_used for r in results),
    )


def evaluate(
    methods: Sequence[str],
    layouts: Sequence[Layout],
    pipelines: dict[str, Pipeline] | None = None,
    seed_groups: int = 5,
    P: int = 20,
    cfg: EnvConfig | None = None,
    seed_base: int = EVAL_SEED_BASE,
    db_seeds: Iterable[int] = DB_SEEDS,
    profiles: dict[TeammateType, PolicyProfile] | None = None,
    log: list[EpisodeResult] | None = None,
) -> list[MethodSummary]:
    """Every method on every layout over the same stratified seed schedule.

    Per-episode results are appended to ``log`` when one is given.
    """
    cfg = cfg or EnvConfig()
    schedule = eval_seeds(seed_groups, seed_base)
    check_seed_hygiene([s for g in schedule for s, _ in g], db_seeds)
    pipelines = pipelines or {}
    profiles = profiles or {}
    out = []
    for layout in layouts:
        for method in methods:
            clf = make_classifier(method, pipelines.get(layout.name))
            results = [
                run_episode(layout, t, clf, P, cfg, seed, profiles.get(t), seed_group=g)
                for g, group in enumerate(schedule)
                for seed, t in group
            ]
            if log is not None:
                log.extend(results)
            out.append(summarize(results))
    return out


def build_pipeline(
    layout: Layout,
    P: int = 20,
    episodes_per_type: int = 10,
    db_seeds: Sequence[int] = DB_SEEDS,
    cfg: EnvConfig | None = None,
    r: int = 8,
    bins: int = 8,
    k: int = 5,
    llm: LlmClient | None = None,
    profiles: dict[TeammateType, PolicyProfile] | None = None,
    **logreg,
) -> Pipeline:
    """Collect a probe database at length ``P`` and fit a rubric to it."""
    db = collect_database([layout], TYPES, episodes_per_type, P, list(db_seeds), cfg, r=r, bins=bins, profiles=profiles)
    return Pipeline(db.rubric, db, llm or mock_client(), k, **logreg)


# -- Pareto frontier ----------------------------------------------------------

Point = tuple[float, float, str]


def pareto_frontier(points: Sequence[Point]) -> list[Point]:
    """Points no other point beats on both accuracy and return (equal points all stay).

    Sweeps in decreasing accuracy; output keeps input order.
    """
    if not points:
        raise ValueError("need at least one point")
    order = sorted(range(len(points)), key=lambda i: (-points[i][0], -points[i][1]))
    keep = set()
    best_higher = -np.inf  # best return among points with strictly higher accuracy
    i = 0
    while i < len(order):
        j = i
        acc = points[order[i]][0]
        while j < len(order) and points[order[j]][0] == acc:
            j += 1
        group = order[i:j]
        top = points[group[0]][1]  # sorted, so the group's best return comes first
        for idx in group:
            ret = points[idx][1]
            if ret == top and ret > best_higher:
                keep.add(idx)
        best_higher = max(best_higher, top)
        i = j
    return [p for i, p in enumerate(points) if i in keep]


# -- ablations --------------------------------------------------------------

PROBE_LENGTHS = (5, 10, 20, 40, 80)
K_VALUES = (1, 3, 5, 10)


@dataclass(frozen=True)
class AblationRow:
    param: str
    value: int
    summary: MethodSummary


def ablate_probe(
    method: str,
    layout: Layout,
    P_values: Sequence[int] = PROBE_LENGTHS,
    seed_groups: int = 5,
    cfg: EnvConfig | None = None,
    seed_base: int = EVAL_SEED_BASE,
    pipeline_kwargs: dict | None = None,
    log: list[EpisodeResult] | None = None,
) -> list[AblationRow]:
    """Re-collect the database and refit the rubric at each probe length, then evaluate."""
    rows = []
    for P in P_values:
        pipe = build_pipeline(layout, P=P, cfg=cfg, **(pipeline_kwargs or {}))
        [s] = evaluate([method], [layout], {layout.name: pipe}, seed_groups, P, cfg, seed_base, log=log)
        rows.append(AblationRow("P", P, s))
    return rows


def ablate_k(
    layout: Layout,
    k_values: Sequence[int] = K_VALUES,
    seed_groups: int = 5,
    P: int = 20,
    cfg: EnvConfig | None = None,
    seed_base: int = EVAL_SEED_BASE,
    pipeline: Pipeline | None = None,
    log: list[EpisodeResult] | None = None,
) -> list[AblationRow]:
    base = pipeline or build_pipeline(layout, P=P, cfg=cfg)
    rows = []
    for k in k_values:
        pipe = Pipeline(base.rubric, base.db, base.llm, k)
        [s] = evaluate(["recollab"], [layout], {layout.name: pipe}, seed_groups, P, cfg, seed_base, log=log)
        rows.append(AblationRow("k", k, s))
    return rows


# -- output formats ---------------------------------------------------------


def write_jsonl(results: Iterable[EpisodeResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in results:
            f.write(json.dumps(r.to_dict()) + "\n")


def read_jsonl(path: str | Path) -> list[EpisodeResult]:
    with open(path, encoding="utf-8") as f:
        return [EpisodeResult.from_dict(json.loads(line)) for line in f if line.strip()]


def summaries_csv(summaries: Sequence[MethodSummary]) -> str:
    buf = io.StringIO()
    fields = list(MethodSummary.to_row(summaries[0]).keys()) if summaries else []
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for s in summaries:
        w.writerow(s.to_row())
    return buf.getvalue()


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "method", "layout", "accuracy_mean", "accuracy_std", "return_mean", "return_std", "episodes"])
    for r in rows:
        s = r.summary
        w.writerow([r.param, r.value, s.method, s.layout, s.accuracy_mean, s.accuracy_std, s.return_mean, s.return_std, s.episodes])
    return buf.getvalue()


def pareto_csv(summaries: Sequence[MethodSummary]) -> str:
    """Every (accuracy, return) point with a flag for frontier membership, per layout."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layout", "method", "accuracy", "return", "on_frontier"])
    for layout in dict.fromkeys(s.layout for s in summaries):
        pts = [(s.accuracy_mean, s.return_mean, s.method) for s in summaries if s.layout == layout]
        front = {p[2] for p in pareto_frontier(pts)}
        for acc, ret, m in pts:
            w.writerow([layout, m, acc, ret, int(m in front)])
    return buf.getvalue()


def _table(summaries: Sequence[MethodSummary], metric: str, digits: int) -> str:
    layouts = list(dict.fromkeys(s.layout for s in summaries))
    methods = list(dict.fromkeys(s.method for s in summaries))
    cell = {(s.method, s.layout): s for s in summaries}

    def show(s: MethodSummary | None) -> str:
        if s is None:
            return "-"
        return f"{getattr(s, metric + '_mean'):.{digits}f}±{getattr(s, metric + '_std'):.{digits}f}"

    rows = [["method", *layouts]] + [[m, *(show(cell.get((m, l))) for l in layouts)] for m in methods]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def accuracy_table(summaries: Sequence[MethodSummary]) -> str:
    return _table(summaries, "accuracy", 2)


def return_table(summaries: Sequence[MethodSummary]) -> str:
    return _table(summaries, "return", 1)
