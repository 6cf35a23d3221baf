import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recollab.env import builtin_layout
from recollab.fingerprint import FEATURES, Fingerprint
from recollab.policies import TYPES, TeammateType
from recollab.retrieval import (
    DimensionMismatch,
    EmbeddingMode,
    EmptyDatabase,
    TrajectoryDB,
    TrajectoryRecord,
    ZeroVector,
    ZScore,
    collect_database,
    cosine,
    embed,
    meta_path,
    reindex,
    topk,
    unit,
)
from recollab.rubric import build_rubric, describe


def test_cosine_examples():
    assert cosine([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine([1, 0, 0], [0, 1, 0]) == 0.0
    # 32 / sqrt(14 * 77), worked by hand
    assert abs(cosine([1, 2, 3], [4, 5, 6]) - 0.974631846) < 1e-9
    assert abs(cosine([1, 2, 3], [4, 5, 6]) - 32 / math.sqrt(14 * 77)) < 1e-12


def test_cosine_errors():
    with pytest.raises(DimensionMismatch):
        cosine([1, 2], [1, 2, 3])
    with pytest.raises(ZeroVector):
        cosine([0, 0], [1, 2])


@settings(max_examples=50)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=16))
def test_unit_always_has_norm_one(xs):
    assert abs(np.linalg.norm(unit(xs)) - 1) <= 1e-6


def test_zero_vector_maps_to_first_basis_vector():
    assert unit([0.0, 0.0, 0.0]).tolist() == [1.0, 0.0, 0.0]


def _rubric():
    rng = np.random.default_rng(0)
    ds = [(Fingerprint(tuple((rng.random(21) * 5).tolist()), 20), t) for t in TYPES for _ in range(6)]
    return build_rubric(ds, FEATURES[:8])


def test_zscore_embedding_of_global_mean_is_e1():
    rub = _rubric()
    z = ZScore.from_rubric(rub)
    vals = [0.0] * len(FEATURES)
    for name, m in zip(z.names, z.mean):
        vals[FEATURES.index(name)] = m
    v = z.embed(Fingerprint(tuple(vals), 20))
    assert v[0] == 1.0 and np.allclose(v[1:], 0, atol=1e-9)


def test_zscore_matches_pooled_moments():
    rng = np.random.default_rng(3)
    ds = [(Fingerprint(tuple((rng.random(21) * 5).tolist()), 20), t) for t in TYPES for _ in range(7)]
    rub = build_rubric(ds, FEATURES[:4])
    z = ZScore.from_rubric(rub)
    X = np.array([fp.vector(FEATURES[:4]) for fp, _ in ds])
    assert np.allclose(z.mean, X.mean(axis=0), atol=1e-12)
    assert np.allclose(z.std, X.std(axis=0), atol=1e-9)


def test_identical_fingerprints_embed_identically():
    rub = _rubric()
    fp = Fingerprint(tuple(float(i) for i in range(21)), 20)
    a = embed(describe(fp, rub.selected), fp, EmbeddingMode.FEATURE_ZSCORE, ZScore.from_rubric(rub))
    b = embed(describe(fp, rub.selected), fp, EmbeddingMode.FEATURE_ZSCORE, ZScore.from_rubric(rub))
    assert a.tolist() == b.tolist()


def _random_db(rng, n, dim):
    db = TrajectoryDB(_rubric())
    fp = Fingerprint((0.0,) * 21, 20)
    for i in range(n):
        v = unit(rng.normal(size=dim))
        db.insert(TrajectoryRecord(f"r{i}", "x", TYPES[i % 5], 20, fp, "", tuple(v.tolist()), i))
    return db


def brute_force(db, q, k):
    """Full sort of (−score, insertion index) pairs computed one record at a time."""
    scored = []
    for i, rec in enumerate(db.records):
        e = rec.embedding
        s = sum(a * b for a, b in zip(e, q)) / (math.sqrt(sum(a * a for a in e)) * math.sqrt(sum(b * b for b in q)))
        scored.append((-s, i))
    scored.sort()
    return [i for _, i in scored[:k]]


def test_topk_matches_brute_force_on_50_records():
    rng = np.random.default_rng(5)
    db = _random_db(rng, 50, 8)
    q = unit(rng.normal(size=8))
    got = [db.records.index(r) for r, _ in topk(db, q, 5)]
    assert got == brute_force(db, q, 5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 40), dim=st.integers(1, 10), k=st.integers(1, 50))
def test_topk_exactness_property(seed, n, dim, k):
    rng = np.random.default_rng(seed)
    db = _random_db(rng, n, dim)
    q = unit(rng.normal(size=dim))
    hits = topk(db, q, k)
    assert len(hits) == min(k, n)
    assert [db.records.index(r) for r, _ in hits] == brute_force(db, q, k)
    scores = [s for _, s in hits]
    assert scores == sorted(scores, reverse=True)


def test_ties_keep_insertion_order():
    db = TrajectoryDB(_rubric())
    fp = Fingerprint((0.0,) * 21, 20)
    for i in range(4):
        db.insert(TrajectoryRecord(f"r{i}", "x", TYPES[i], 20, fp, "", (1.0, 0.0), i))
    assert [r.id for r, _ in topk(db, [1.0, 0.0], 3)] == ["r0", "r1", "r2"]


def test_self_query_and_oversized_k():
    rng = np.random.default_rng(6)
    db = _random_db(rng, 12, 5)
    for rec in db.records:
        (top, score), *_ = topk(db, rec.embedding, 1)
        assert top is rec and abs(score - 1) <= 1e-6
    assert len(topk(db, db.records[0].embedding, 100)) == 12


def test_topk_errors():
    db = TrajectoryDB(_rubric())
    with pytest.raises(EmptyDatabase):
        topk(db, [1.0], 1)
    db = _random_db(np.random.default_rng(0), 3, 4)
    with pytest.raises(DimensionMismatch):
        topk(db, [1.0, 0.0], 1)
    with pytest.raises(ValueError):
        topk(db, [1.0, 0, 0, 0], 0)


def test_insert_rejects_dimension_drift_and_duplicates():
    db = _random_db(np.random.default_rng(0), 2, 4)
    fp = Fingerprint((0.0,) * 21, 20)
    with pytest.raises(DimensionMismatch):
        db.insert(TrajectoryRecord("new", "x", TYPES[0], 20, fp, "", (1.0, 0.0), 0))
    with pytest.raises(ValueError):
        db.insert(TrajectoryRecord("r0", "x", TYPES[0], 20, fp, "", (1.0, 0.0, 0.0, 0.0), 0))


@pytest.fixture(scope="module")
def cramped_db():
    return collect_database([builtin_layout("cramped_room")])


def test_default_collection(cramped_db):
    db = cramped_db
    assert len(db) == 50
    assert all(r.probe_length == 20 for r in db.records)
    for t in TYPES:
        assert sum(r.true_type is t for r in db.records) == 10
    for r in db.records:
        assert abs(np.linalg.norm(r.embedding) - 1) <= 1e-6
        assert r.description == describe(r.fingerprint, db.rubric.selected)
    assert db.metadata["dimension"] == 8
    assert db.metadata["embedding_mode"] == "feature_zscore"


def test_self_retrieval_on_collected_db(cramped_db):
    for rec in cramped_db.records:
        hits = topk(cramped_db, rec.embedding, len(cramped_db))
        assert abs(hits[0][1] - 1) <= 1e-6
        # identical probes tie at the top; the record itself is among them
        tied = [r for r, s in hits if abs(s - hits[0][1]) <= 1e-12]
        assert rec in tied


def test_round_trip(tmp_path, cramped_db):
    path = tmp_path / "db.jsonl"
    cramped_db.save(path)
    assert meta_path(path).exists()
    back = TrajectoryDB.load(path)
    assert back.records == cramped_db.records
    assert back.rubric == cramped_db.rubric
    q = cramped_db.records[7].embedding
    assert [(r.id, s) for r, s in back.topk(q, 5)] == [(r.id, s) for r, s in cramped_db.topk(q, 5)]


def test_collection_is_byte_identical(tmp_path, cramped_db):
    again = collect_database([builtin_layout("cramped_room")])
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    cramped_db.save(a)
    again.save(b)
    assert a.read_bytes() == b.read_bytes()
    assert meta_path(a).read_bytes() == meta_path(b).read_bytes()


def test_reindex_under_new_rubric(cramped_db):
    ds = cramped_db.dataset()
    rub = build_rubric(ds, FEATURES[:3])
    db2 = reindex(cramped_db, rub)
    assert db2.dim == 3
    assert [r.id for r in db2.records] == [r.id for r in cramped_db.records]
    assert db2.records[0].description == describe(cramped_db.records[0].fingerprint, FEATURES[:3])


def test_external_mode_with_mock_client_falls_back_to_zscore():
    from recollab.llm_client import LlmClient

    rub = _rubric()
    fp = Fingerprint(tuple(float(i) for i in range(21)), 20)
    z = ZScore.from_rubric(rub)
    got = embed("text", fp, EmbeddingMode.EXTERNAL_SERVICE, z, LlmClient())
    assert got.tolist() == z.embed(fp).tolist()
