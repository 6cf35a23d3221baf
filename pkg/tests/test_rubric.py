import json
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recollab.fingerprint import FEATURES, Fingerprint, UnknownFeature
from recollab.policies import TYPES, TeammateType
from recollab.rubric import (
    TYPE_GLOSSES,
    InsufficientSamples,
    Rubric,
    build_rubric,
    describe,
    fmt,
    human_name,
    rubric_to_text,
    unit,
)

SEL = ("dwell_near_Pot", "interact_count_Pot", "held_frac_Plate")


def _fp(**kw):
    vals = [0.0] * len(FEATURES)
    for k, v in kw.items():
        vals[FEATURES.index(k)] = float(v)
    return Fingerprint(tuple(vals), 20)


def _dataset(per_type):
    """per_type: {type: [dict of feature values]}"""
    return [(_fp(**row), t) for t, rows in per_type.items() for row in rows]


def test_two_sample_mean_and_population_std():
    ds = _dataset({t: [{"dwell_near_Pot": 1}, {"dwell_near_Pot": 3}] for t in TYPES})
    rub = build_rubric(ds, ["dwell_near_Pot"])
    for t in TYPES:
        assert rub.prototypes[t][0] == (2.0, 1.0)
        assert rub.counts[t] == 2


def welford(xs):
    n, mean, m2 = 0, 0.0, 0.0
    for x in xs:
        n += 1
        d = x - mean
        mean += d / n
        m2 += d * (x - mean)
    return mean, (m2 / n) ** 0.5


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=12),
        min_size=5,
        max_size=5,
    )
)
def test_moments_match_streaming_oracle(columns):
    ds = _dataset({t: [{"blocked_count": x} for x in col] for t, col in zip(TYPES, columns)})
    rub = build_rubric(ds, ["blocked_count"])
    for t, col in zip(TYPES, columns):
        m, s = welford(col)
        got_m, got_s = rub.prototypes[t][0]
        assert abs(got_m - m) <= 1e-9 * max(1.0, abs(m))
        assert abs(got_s - s) <= 1e-9 * max(1.0, abs(s))
        assert got_s >= 0


def test_single_sample_type_is_rejected():
    per = {t: [{"dwell_near_Pot": 1}, {"dwell_near_Pot": 2}] for t in TYPES}
    per[TeammateType.MIXED] = [{"dwell_near_Pot": 1}]
    with pytest.raises(InsufficientSamples) as err:
        build_rubric(_dataset(per), ["dwell_near_Pot"])
    assert err.value.ttype is TeammateType.MIXED


def test_every_type_covers_every_selected_feature():
    ds = _dataset({t: [{"dwell_near_Pot": i, "held_frac_Plate": 0.5} for i in range(3)] for t in TYPES})
    rub = build_rubric(ds, SEL)
    for t in TYPES:
        assert len(rub.prototypes[t]) == len(SEL)


def test_json_round_trip():
    rng = np.random.default_rng(0)
    ds = [(Fingerprint(tuple(rng.random(21).tolist()), 20), t) for t in TYPES for _ in range(4)]
    rub = build_rubric(ds, SEL)
    back = Rubric.from_json(rub.to_json())
    assert back == rub
    assert json.loads(rub.to_json())["selected_features"] == list(SEL)


def test_describe_lists_selected_features_in_order():
    fp = _fp(dwell_near_Pot=12, interact_count_Pot=2, held_frac_Plate=0.25)
    text = describe(fp, SEL)
    lines = text.splitlines()
    assert lines[0] == "Probe window: 20 steps."
    assert lines[1] == "time spent adjacent to pot: 12.000 (steps)"
    assert lines[2] == "successful interactions with pot: 2.000 (count)"
    assert lines[3] == "share of steps holding a plate: 0.250 (fraction)"
    assert len(lines) == 1 + len(SEL)
    assert describe(fp, SEL) == text


def test_describe_rejects_unknown_feature():
    with pytest.raises(UnknownFeature):
        describe(_fp(), ["speed"])


def test_every_catalog_feature_has_a_readable_name():
    for name in FEATURES:
        assert "_" not in human_name(name)
        assert unit(name) in {"steps", "fraction", "count", "points"}


def test_fmt_fixed_precision():
    assert fmt(1 / 3) == "0.333"
    assert fmt(-0.0001) == "0.000"
    assert fmt(2) == "2.000"


def test_rubric_text_blocks_parse_back():
    rng = np.random.default_rng(1)
    ds = [(Fingerprint(tuple((rng.random(21) * 10).tolist()), 20), t) for t in TYPES for _ in range(5)]
    rub = build_rubric(ds, SEL)
    text = rubric_to_text(rub)
    blocks = text.strip().split("\n\n")
    assert len(blocks) == len(TYPES)
    pat = re.compile(r"^- (.+): μ=(-?\d+\.\d{3}), σ=(\d+\.\d{3})$")
    for t, block in zip(TYPES, blocks):
        head, *rows = block.splitlines()
        assert head.startswith(f"Type {t.key}:")
        assert TYPE_GLOSSES[t] in head
        assert len(rows) == len(SEL)
        for name, row, (m, s) in zip(SEL, rows, rub.prototypes[t]):
            got = pat.match(row)
            assert got, row
            assert got.group(1) == human_name(name)
            assert abs(float(got.group(2)) - m) <= 5e-4
            assert abs(float(got.group(3)) - s) <= 5e-4
    assert rubric_to_text(rub) == text


def test_pot_gloss():
    assert TYPE_GLOSSES[TeammateType.POT_FOCUSED] == "Prioritizes placing onions in the pot."
