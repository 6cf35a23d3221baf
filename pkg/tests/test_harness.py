import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recollab.env import EnvConfig, builtin_layout
from recollab.harness import (
    METHODS,
    EpisodeResult,
    Pipeline,
    SeedOverlap,
    ablate_k,
    ablate_probe,
    ablation_csv,
    accuracy_table,
    build_pipeline,
    check_seed_hygiene,
    eval_seeds,
    evaluate,
    make_classifier,
    pareto_csv,
    pareto_frontier,
    read_jsonl,
    return_table,
    run_episode,
    summaries_csv,
    summarize,
    write_jsonl,
)
from recollab.policies import TYPES, TeammateType

T = TeammateType
SHORT = EnvConfig(horizon=120)


@pytest.fixture(scope="module")
def cramped():
    return builtin_layout("cramped_room")


@pytest.fixture(scope="module")
def pipe(cramped):
    return build_pipeline(cramped)


# -- Pareto frontier ----------------------------------------------------------


def dominance_oracle(points):
    out = []
    for i, (a, r, _) in enumerate(points):
        dominated = any(
            (b >= a and s >= r) and (b > a or s > r) for j, (b, s, _) in enumerate(points) if j != i
        )
        if not dominated:
            out.append(points[i])
    return out


def test_pareto_examples():
    assert pareto_frontier([(0.5, 10.0, "a")]) == [(0.5, 10.0, "a")]
    assert pareto_frontier([(0.9, 100.0, "a"), (0.8, 90.0, "b")]) == [(0.9, 100.0, "a")]
    tied = [(0.7, 50.0, "a"), (0.7, 50.0, "b"), (0.6, 60.0, "c")]
    assert pareto_frontier(tied) == tied
    with pytest.raises(ValueError):
        pareto_frontier([])


def test_pareto_matches_oracle_on_random_sets():
    rng = np.random.default_rng(0)
    for trial in range(100):
        # coarse grid values so ties and duplicates show up
        acc = rng.integers(0, 20, 100) / 20 if trial % 2 else rng.random(100)
        ret = rng.integers(0, 30, 100) * 10.0 if trial % 2 else rng.random(100) * 300
        pts = [(float(a), float(r), f"m{i}") for i, (a, r) in enumerate(zip(acc, ret))]
        assert pareto_frontier(pts) == dominance_oracle(pts)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=30))
def test_pareto_idempotent(raw):
    pts = [(a / 5, float(r), str(i)) for i, (a, r) in enumerate(raw)]
    front = pareto_frontier(pts)
    assert front == dominance_oracle(pts)
    assert pareto_frontier(front) == front


# -- episodes -----------------------------------------------------------------


def test_oracle_switches_at_zero(cramped):
    r = run_episode(cramped, T.SERVE_FOCUSED, make_classifier("oracle"), 20, seed=101)
    assert r.predicted_type is T.SERVE_FOCUSED and r.switch_step == 0 and r.confidence == 1.0


@pytest.mark.parametrize("method", ["static", "random", "prototype", "collab", "recollab", "logreg", "plastic"])
def test_single_switch_at_probe_end(cramped, pipe, method):
    r = run_episode(cramped, T.POT_FOCUSED, make_classifier(method, pipe), 20, SHORT, seed=102)
    assert r.switch_step == 20
    assert r.classifier_calls == 1
    assert r.episodic_return == r.deliveries * SHORT.reward_per_delivery


def test_static_keeps_default(cramped):
    r = run_episode(cramped, T.PLATE_FOCUSED, make_classifier("static"), 20, SHORT, seed=103)
    assert r.predicted_type is T.DEFAULT


def test_probe_of_horizon_minus_one(cramped, pipe):
    r = run_episode(cramped, T.MIXED, make_classifier("prototype", pipe), 119, SHORT, seed=104)
    assert r.switch_step == 119
    with pytest.raises(ValueError):
        run_episode(cramped, T.MIXED, make_classifier("prototype", pipe), 120, SHORT, seed=104)


def test_episode_determinism(cramped, pipe):
    clf = make_classifier("recollab", pipe)
    a = run_episode(cramped, T.DEFAULT, clf, 20, SHORT, seed=105)
    b = run_episode(cramped, T.DEFAULT, make_classifier("recollab", build_pipeline(cramped)), 20, SHORT, seed=105)
    assert a == b


def test_unknown_method_and_missing_pipeline():
    with pytest.raises(ValueError):
        make_classifier("gpt")
    with pytest.raises(ValueError):
        make_classifier("recollab")


def test_result_round_trip(tmp_path, cramped):
    rs = [run_episode(cramped, t, make_classifier("random"), 10, SHORT, seed=110 + int(t)) for t in TYPES]
    write_jsonl(rs, tmp_path / "e.jsonl")
    assert read_jsonl(tmp_path / "e.jsonl") == rs


# -- evaluation ---------------------------------------------------------------


def test_stratified_schedule_and_hygiene():
    sched = eval_seeds(3)
    assert len(sched) == 3 and all(sorted(t for _, t in g) == list(TYPES) for g in sched)
    seeds = [s for g in sched for s, _ in g]
    assert len(set(seeds)) == 15 and min(seeds) == 100
    with pytest.raises(SeedOverlap):
        check_seed_hygiene([5, 100], range(10))
    with pytest.raises(SeedOverlap):
        evaluate(["random"], [builtin_layout("cramped_room")], seed_groups=1, seed_base=0)


def test_summary_recomputes_from_log(cramped, pipe):
    log = []
    [s] = evaluate(["prototype"], [cramped], {cramped.name: pipe}, seed_groups=3, cfg=SHORT, log=log)
    assert s.episodes == len(log) == 15
    correct = sum(r.true_type == r.predicted_type for r in log)
    assert abs(s.accuracy - correct / len(log)) <= 1e-12
    assert abs(s.accuracy - np.trace(np.array(s.confusion)) / np.sum(s.confusion)) <= 1e-12
    groups = {}
    for r in log:
        groups.setdefault(r.seed_group, []).append(r)
    accs = [np.mean([r.correct for r in g]) for g in groups.values()]
    rets = [np.mean([r.episodic_return for r in g]) for g in groups.values()]
    assert abs(s.accuracy_mean - np.mean(accs)) <= 1e-12
    assert abs(s.accuracy_std - np.std(accs)) <= 1e-12
    assert abs(s.return_mean - np.mean(rets)) <= 1e-12
    assert abs(s.return_std - np.std(rets)) <= 1e-12
    assert 0 <= s.accuracy_mean <= 1
    assert np.array(s.confusion).sum(axis=1).tolist() == [3] * 5


def test_summarize_requires_episodes():
    with pytest.raises(ValueError):
        summarize([])


def test_tables_and_csv(cramped, pipe):
    sums = evaluate(["oracle", "static"], [cramped], {cramped.name: pipe}, seed_groups=1, cfg=SHORT)
    text = accuracy_table(sums)
    assert text.splitlines()[0].split() == ["method", "cramped_room"]
    assert "oracle" in return_table(sums)
    assert summaries_csv(sums).splitlines()[0].startswith("method,layout,accuracy_mean")
    lines = pareto_csv(sums).splitlines()
    assert lines[0] == "layout,method,accuracy,return,on_frontier"
    assert any(l.startswith("cramped_room,oracle,1.0,") and l.endswith(",1") for l in lines)


# -- ablations ----------------------------------------------------------------


def test_probe_ablation_rows(cramped):
    rows = ablate_probe("prototype", cramped, (5, 10), seed_groups=1, cfg=SHORT)
    assert [r.value for r in rows] == [5, 10]
    assert all(r.param == "P" and r.summary.episodes == 5 for r in rows)
    assert ablation_csv(rows).count("\n") == 3


def test_k_ablation_rows(cramped, pipe):
    rows = ablate_k(cramped, (1, 3, 5, 10, len(pipe.db)), seed_groups=1, cfg=SHORT, pipeline=pipe)
    assert [r.value for r in rows] == [1, 3, 5, 10, 50]
    assert all(r.summary.method == "recollab" for r in rows)


def test_method_list():
    assert set(METHODS) == {"collab", "recollab", "prototype", "plastic", "logreg", "random", "static", "oracle"}
