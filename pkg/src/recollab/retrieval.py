"""Labeled probe database, description embeddings and exact top-k search."""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .env import EnvConfig, Layout
from .episode import Episode
from .fingerprint import Fingerprint, extract_features, probe_trace, select_features
from .llm_client import LlmClient
from .policies import TYPES, PolicyProfile, TeammateType
from .rubric import Rubric, build_rubric, describe

DB_SCHEMA_VERSION = 1


class EmbeddingMode(enum.Enum):
    FEATURE_ZSCORE = "feature_zscore"
    EXTERNAL_SERVICE = "external_service"


class DimensionMismatch(ValueError):
    pass


class ZeroVector(ValueError):
    pass


class EmptyDatabase(ValueError):
    pass


def unit(v: np.ndarray) -> np.ndarray:
    """L2-normalize; the zero vector maps to e1 so the result is always a unit vector."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / n


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionMismatch(f"{u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class ZScore:
    """Global per-feature mean/std over all types of a rubric."""

    names: tuple[str, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]

    @classmethod
    def from_rubric(cls, rubric: Rubric) -> "ZScore":
        # pooled moments from the per-type prototypes, weighted by episode counts
        w = np.array([rubric.counts[t] for t in TYPES], dtype=float)
        mu = np.array([rubric.means(t) for t in TYPES])
        var = np.array([rubric.stds(t) ** 2 for t in TYPES])
        g_mean = w @ mu / w.sum()
        g_var = w @ (var + mu**2) / w.sum() - g_mean**2
        g_std = np.sqrt(np.maximum(g_var, 0.0))
        return cls(rubric.selected, tuple(g_mean.tolist()), tuple(g_std.tolist()))

    def embed(self, fp: Fingerprint) -> np.ndarray:
        x = fp.vector(self.names)
        mean, std = np.array(self.mean), np.array(self.std)
        z = np.divide(x - mean, std, out=np.zeros_like(x), where=std > 0)
        return unit(z)


def embed(
    description: str,
    fp: Fingerprint,
    mode: EmbeddingMode,
    zscore: ZScore | None = None,
    client: LlmClient | None = None,
) -> np.ndarray:
    mode = EmbeddingMode(mode)
    if mode is EmbeddingMode.EXTERNAL_SERVICE:
        if client is None:
            raise ValueError("external embeddings need an llm client")
        vec = client.embed_remote(description)
        if vec is not None:
            return unit(vec)
        # mock client: fall through to the local embedding
    if zscore is None:
        raise ValueError("feature z-score embedding needs global statistics")
    return zscore.embed(fp)


@dataclass(frozen=True)
class TrajectoryRecord:
    id: str
    layout: str
    true_type: TeammateType
    probe_length: int
    fingerprint: Fingerprint
    description: str
    embedding: tuple[float, ...]
    seed: int
    # (abstract state, teammate action) per probe step, used by the Bayesian baseline
    trace: tuple[tuple[int, int], ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "layout": self.layout,
            "true_type": self.true_type.key,
            "probe_length": self.probe_length,
            "seed": self.seed,
            "fingerprint": self.fingerprint.to_dict()["features"],
            "description": self.description,
            "embedding": list(self.embedding),
            "trace": [list(p) for p in self.trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryRecord":
        fp = Fingerprint.from_dict({"features": d["fingerprint"], "probe_length": d["probe_length"]})
        return cls(
            id=d["id"],
            layout=d["layout"],
            true_type=TeammateType.parse(d["true_type"]),
            probe_length=int(d["probe_length"]),
            fingerprint=fp,
            description=d["description"],
            embedding=tuple(float(x) for x in d["embedding"]),
            seed=int(d["seed"]),
            trace=tuple((int(s), int(a)) for s, a in d.get("trace", ())),
        )


def rubric_version(rubric: Rubric) -> str:
    return hashlib.sha256(rubric.to_json().encode()).hexdigest()[:16]


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


@dataclass
class TrajectoryDB:
    """Append-only record store; single writer, many concurrent readers."""

    rubric: Rubric
    mode: EmbeddingMode = EmbeddingMode.FEATURE_ZSCORE
    records: list[TrajectoryRecord] = field(default_factory=list)
    dim: int | None = None

    def __post_init__(self):
        self.mode = EmbeddingMode(self.mode)
        self._ids = {r.id for r in self.records}
        self._matrix: np.ndarray | None = None
        if self.records and self.dim is None:
            self.dim = len(self.records[0].embedding)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def zscore(self) -> ZScore:
        return ZScore.from_rubric(self.rubric)

    @property
    def metadata(self) -> dict:
        return {
            "schema_version": DB_SCHEMA_VERSION,
            "embedding_mode": self.mode.value,
            "dimension": self.dim,
            "rubric_version": rubric_version(self.rubric),
            "record_count": len(self.records),
            "rubric": self.rubric.to_dict(),
        }

    def insert(self, rec: TrajectoryRecord) -> None:
        if self.dim is None:
            self.dim = len(rec.embedding)
        elif len(rec.embedding) != self.dim:
            raise DimensionMismatch(f"record {rec.id} has dimension {len(rec.embedding)}, database has {self.dim}")
        if rec.id in self._ids:
            raise ValueError(f"duplicate record id {rec.id}")
        self.records.append(rec)
        self._ids.add(rec.id)
        self._matrix = None

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.array([r.embedding for r in self.records], dtype=float).reshape(len(self.records), -1)
        return self._matrix

    def topk(self, query: Sequence[float], k: int) -> list[tuple[TrajectoryRecord, float]]:
        return topk(self, query, k)

    def dataset(self) -> list[tuple[Fingerprint, TeammateType]]:
        return [(r.fingerprint, r.true_type) for r in self.records]

    def subset(self, layout: str) -> "TrajectoryDB":
        return TrajectoryDB(self.rubric, self.mode, [r for r in self.records if r.layout == layout], self.dim)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")
        meta_path(path).write_text(json.dumps(self.metadata, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryDB":
        path = Path(path)
        meta = json.loads(meta_path(path).read_text(encoding="utf-8"))
        if meta.get("schema_version") != DB_SCHEMA_VERSION:
            raise ValueError(f"unsupported database schema {meta.get('schema_version')!r}")
        db = cls(Rubric.from_dict(meta["rubric"]), EmbeddingMode(meta["embedding_mode"]), dim=meta["dimension"])
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    db.insert(TrajectoryRecord.from_dict(json.loads(line)))
        return db


def topk(db: TrajectoryDB, query: Sequence[float], k: int) -> list[tuple[TrajectoryRecord, float]]:
    """Exact cosine scan; best first, equal scores in insertion order."""
    if len(db) == 0:
        raise EmptyDatabase("retrieval database is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=float)
    if q.shape != (db.dim,):
        raise DimensionMismatch(f"query has shape {q.shape}, database dimension is {db.dim}")
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ZeroVector("query is the zero vector")
    mat = db.matrix()
    scores = mat @ q / (np.linalg.norm(mat, axis=1) * qn)
    order = np.argsort(-scores, kind="stable")[:k]
    return [(db.records[i], float(scores[i])) for i in order]


@dataclass(frozen=True)
class RawProbe:
    layout: str
    true_type: TeammateType
    seed: int
    fingerprint: Fingerprint
    trace: tuple[tuple[int, int], ...]


def collect_probes(
    layouts: Iterable[Layout],
    types: Iterable[TeammateType] = TYPES,
    episodes_per_type: int = 10,
    P: int = 20,
    seeds: Sequence[int] | None = None,
    cfg: EnvConfig | None = None,
    profiles: dict[TeammateType, PolicyProfile] | None = None,
) -> list[RawProbe]:
    """Probe each type with the default best response; one episode per (seed, type)."""
    cfg = cfg or EnvConfig()
    seeds = list(range(episodes_per_type)) if seeds is None else list(seeds)
    if len(seeds) < episodes_per_type:
        raise ValueError(f"need {episodes_per_type} seeds, got {len(seeds)}")
    if not 1 <= P < cfg.horizon:
        raise ValueError("probe length must be in [1, horizon)")
    out = []
    types = list(types)
    # seed-major order, so equal-score ties in retrieval rotate through the types
    for layout in layouts:
        for seed in seeds[:episodes_per_type]:
            for t in types:
                ep = Episode(layout, t, cfg, seed, profile=(profiles or {}).get(t))
                hist = ep.probe(P)
                out.append(RawProbe(layout.name, t, seed, extract_features(hist), tuple(probe_trace(hist))))
    return out


def index_probes(
    probes: Sequence[RawProbe],
    rubric: Rubric,
    mode: EmbeddingMode = EmbeddingMode.FEATURE_ZSCORE,
    client: LlmClient | None = None,
) -> TrajectoryDB:
    db = TrajectoryDB(rubric, mode)
    z = db.zscore
    for p in probes:
        text = describe(p.fingerprint, rubric.selected)
        vec = embed(text, p.fingerprint, mode, z, client)
        db.insert(
            TrajectoryRecord(
                id=f"{p.layout}/{p.true_type.key}/{p.seed}",
                layout=p.layout,
                true_type=p.true_type,
                probe_length=p.fingerprint.probe_length,
                fingerprint=p.fingerprint,
                description=text,
                embedding=tuple(vec.tolist()),
                seed=p.seed,
                trace=p.trace,
            )
        )
    return db


def fit_rubric(dataset, r: int = 8, bins: int = 8) -> Rubric:
    return build_rubric(dataset, select_features(dataset, r, bins))


def collect_database(
    layouts: Iterable[Layout],
    types: Iterable[TeammateType] = TYPES,
    episodes_per_type: int = 10,
    P: int = 20,
    seeds: Sequence[int] | None = None,
    cfg: EnvConfig | None = None,
    rubric: Rubric | None = None,
    r: int = 8,
    bins: int = 8,
    mode: EmbeddingMode = EmbeddingMode.FEATURE_ZSCORE,
    client: LlmClient | None = None,
    profiles: dict[TeammateType, PolicyProfile] | None = None,
) -> TrajectoryDB:
    """Collect, describe and embed labeled probes.

    Without a ``rubric`` one is fitted to the collected fingerprints, so the
    descriptions use the features that separate these very probes best.
    """
    probes = collect_probes(layouts, types, episodes_per_type, P, seeds, cfg, profiles)
    if rubric is None:
        rubric = fit_rubric([(p.fingerprint, p.true_type) for p in probes], r, bins)
    return index_probes(probes, rubric, mode, client)


def reindex(db: TrajectoryDB, rubric: Rubric, client: LlmClient | None = None) -> TrajectoryDB:
    """Re-describe and re-embed every record under another rubric."""
    probes = [RawProbe(r.layout, r.true_type, r.seed, r.fingerprint, r.trace) for r in db.records]
    return index_probes(probes, rubric, db.mode, client)
