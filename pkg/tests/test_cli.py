from pathlib import Path

import pytest
from click.testing import CliRunner

from recollab.cli import ConfigInvalid, load_config, main, parse_override

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


@pytest.fixture
def cfg_file(tmp_path):
    text = CONFIG.read_text().replace('output_dir = "runs"', f'output_dir = "{tmp_path / "runs"}"')
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


def invoke(*args):
    return CliRunner().invoke(main, list(args))


def small(cfg_file, *extra):
    return ["--config", str(cfg_file), "--layout", "cramped_room", "--set", "evaluation.seed_groups=1", *extra]


def test_shipped_config_loads():
    cfg = load_config(CONFIG)
    assert cfg.raw["retrieval"]["k"] == 5
    assert [l.name for l in cfg.layouts] == ["cramped_room", "asymmetric_advantage", "coordination_ring"]


def test_collect_reports_record_count(cfg_file):
    res = invoke("collect", *small(cfg_file))
    assert res.exit_code == 0, res.output
    assert "50 records" in res.output


def test_eval_without_database_names_missing_stage(cfg_file):
    res = invoke("eval", *small(cfg_file, "--method", "collab"))
    assert res.exit_code == 2
    assert "error[MissingArtifact]" in res.output
    assert "stage=retrieval" in res.output


def test_build_rubric_without_database(cfg_file):
    res = invoke("build-rubric", *small(cfg_file))
    assert res.exit_code == 2
    assert "stage=retrieval" in res.output


def test_unknown_key_is_config_invalid(cfg_file):
    res = invoke("collect", *small(cfg_file, "--set", "retrieval.kk=3"))
    assert res.exit_code == 2
    assert "error[ConfigInvalid]" in res.output
    assert "retrieval.kk" in res.output


def test_unknown_layout_and_method(cfg_file):
    assert "error[ConfigInvalid]" in invoke("collect", "--config", str(cfg_file), "--layout", "nowhere").output
    assert "error[ConfigInvalid]" in invoke("eval", *small(cfg_file, "--method", "magic")).output


def test_eval_seeds_must_not_overlap_database(cfg_file):
    res = invoke("eval", *small(cfg_file, "--seed-base", "3"))
    assert res.exit_code == 2
    assert "ConfigInvalid" in res.output


def test_parse_override_values():
    assert parse_override("retrieval.k=3") == (["retrieval", "k"], 3)
    assert parse_override("llm.mode=mock") == (["llm", "mode"], "mock")
    assert parse_override("evaluation.probe_lengths=[5, 10]") == (["evaluation", "probe_lengths"], [5, 10])
    with pytest.raises(ConfigInvalid):
        parse_override("novalue")


def test_refuses_to_overwrite(cfg_file):
    assert invoke("collect", *small(cfg_file)).exit_code == 0
    res = invoke("collect", *small(cfg_file))
    assert res.exit_code == 2
    assert "error[ArtifactExists]" in res.output
    assert invoke("collect", *small(cfg_file, "--overwrite")).exit_code == 0


def test_stages_share_a_run_and_are_deterministic(cfg_file, tmp_path):
    outputs = []
    for rid in ("a", "b"):
        assert invoke("collect", *small(cfg_file, "--run-id", rid)).exit_code == 0
        assert invoke("build-rubric", *small(cfg_file, "--run-id", rid)).exit_code == 0
        res = invoke("eval", *small(cfg_file, "--run-id", rid, "--method", "prototype", "--method", "recollab"))
        assert res.exit_code == 0, res.output
        run = tmp_path / "runs" / rid
        files = sorted(p for p in run.rglob("*") if p.is_file())
        outputs.append({p.relative_to(run): p.read_bytes() for p in files})
    assert outputs[0] == outputs[1]
    assert Path("eval/summary.csv") in outputs[0]


def test_method_flags_do_not_change_run_dir(cfg_file):
    a = load_config(cfg_file, methods=("oracle",))
    b = load_config(cfg_file, methods=("collab", "random"), layouts=("cramped_room",))
    assert a.run_id == b.run_id
    c = load_config(cfg_file, overrides=("retrieval.k=3",))
    assert c.run_id != a.run_id


def test_ablate_probe_writes_csv(cfg_file, tmp_path):
    res = invoke(
        "ablate", "probe", *small(cfg_file, "--method", "prototype", "--set", "evaluation.probe_lengths=[5, 10]")
    )
    assert res.exit_code == 0, res.output
    csv = next((tmp_path / "runs").rglob("probe_prototype.csv")).read_text()
    assert csv.splitlines()[0].count(",") >= 2
    assert len(csv.strip().splitlines()) == 3
