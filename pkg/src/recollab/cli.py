"""Command line: collect → build-rubric → eval, plus the two ablations.

Every command reads one TOML config (see ``configs/default.toml``), applies
``--set section.key=value`` overrides, validates the result, and only then
writes anything. Outputs go to ``<output_dir>/<run_id>/<stage>/``; existing
files are never replaced unless ``--overwrite`` is given.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import click

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .classify import mock_responder
from .env import LAYOUT_NAMES, EnvConfig, Layout, builtin_layout, layout_from_file
from .fingerprint import rank_features
from .harness import (
    DB_SEEDS,
    EVAL_SEED_BASE,
    K_VALUES,
    METHODS,
    PROBE_LENGTHS,
    Pipeline,
    ablate_k,
    ablate_probe,
    ablation_csv,
    accuracy_table,
    check_seed_hygiene,
    eval_seeds,
    evaluate,
    pareto_csv,
    return_table,
    summaries_csv,
    write_jsonl,
)
from .llm_client import LlmClient, LlmConfig, Mode
from .policies import TYPES, profiles_from_config
from .retrieval import EmbeddingMode, TrajectoryDB, collect_database, meta_path, reindex
from .rubric import Rubric, build_rubric

log = logging.getLogger("recollab")


class CliError(Exception):
    kind = "Error"


class ConfigInvalid(CliError):
    kind = "ConfigInvalid"


class MissingArtifact(CliError):
    kind = "MissingArtifact"

    def __init__(self, stage: str, path: Path, command: str):
        super().__init__(f"stage={stage}: {path} not found; run '{command}' first")
        self.stage = stage


class ArtifactExists(CliError):
    kind = "ArtifactExists"


DEFAULTS: dict[str, dict[str, Any]] = {
    "env": {"horizon": 400, "reward_per_delivery": 20.0, "cook_time": 20, "gamma": 1.0, "handoff_window": 10},
    "policies": {},
    "fingerprint": {"bins": 8, "r": 8},
    "retrieval": {"mode": "feature_zscore", "k": 5, "episodes_per_type": 10, "seeds": list(DB_SEEDS)},
    "llm": {"mode": "mock"},
    "evaluation": {
        "methods": list(METHODS),
        "layouts": list(LAYOUT_NAMES),
        "seed_groups": 5,
        "seed_base": EVAL_SEED_BASE,
        "probe_length": 20,
        "probe_lengths": list(PROBE_LENGTHS),
        "k_values": list(K_VALUES),
        "logreg_epochs": 500,
        "logreg_lr": 0.1,
        "logreg_l2": 1e-4,
    },
    "paths": {"layouts_dir": "", "output_dir": "runs", "run_id": ""},
}
# sections whose keys are free-form (validated by their own loaders)
_OPEN_SECTIONS = {"policies", "llm"}


def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        path = f"{where}{key}"
        if key not in out and where.rstrip(".") not in _OPEN_SECTIONS:
            raise ConfigInvalid(f"unknown config key '{path}'")
        if isinstance(val, dict) and isinstance(out.get(key), dict) and path not in _OPEN_SECTIONS:
            out[key] = _merge(out[key], val, path + ".")
        else:
            out[key] = val
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigInvalid(f"--set expects KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) < 2 or not all(parts):
        raise ConfigInvalid(f"--set key must look like section.key, got {key!r}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return parts, value


def _nest(parts: list[str], value: Any) -> dict:
    out: Any = value
    for p in reversed(parts):
        out = {p: out}
    return out


@dataclass
class RunConfig:
    raw: dict
    env: EnvConfig
    llm: LlmConfig
    layouts: list[Layout]
    profiles: dict
    embedding: EmbeddingMode
    base_dir: Path = field(default=Path("."))

    @property
    def section(self):
        return self.raw

    @property
    def run_id(self) -> str:
        rid = self.raw["paths"]["run_id"]
        if rid:
            return rid
        # only settings that shape the database and rubric, so that collect,
        # build-rubric and eval with different --layout/--method flags share a run
        keyed = {s: self.raw[s] for s in ("env", "policies", "fingerprint", "retrieval", "llm")}
        keyed["probe_length"] = self.raw["evaluation"]["probe_length"]
        digest = hashlib.sha256(json.dumps(keyed, sort_keys=True).encode()).hexdigest()[:10]
        return f"run-{digest}"

    @property
    def run_dir(self) -> Path:
        out = Path(self.raw["paths"]["output_dir"])
        if not out.is_absolute():
            out = self.base_dir / out
        return out / self.run_id

    def stage_dir(self, stage: str) -> Path:
        return self.run_dir / stage

    def db_path(self, layout: str) -> Path:
        return self.stage_dir("collect") / f"{layout}.jsonl"

    def rubric_path(self, layout: str) -> Path:
        return self.stage_dir("rubric") / f"{layout}.json"


def load_config(
    path: str | Path | None = None,
    overrides: tuple[str, ...] = (),
    layouts: tuple[str, ...] = (),
    methods: tuple[str, ...] = (),
    seed_base: int | None = None,
    mode: str | None = None,
    run_id: str | None = None,
) -> RunConfig:
    """Defaults ← config file ← command-line flags, then full validation."""
    raw = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigInvalid(f"cannot read config {path}: {e}") from e
        try:
            raw = _merge(raw, tomllib.loads(text))
        except tomllib.TOMLDecodeError as e:
            raise ConfigInvalid(f"{path}: {e}") from e
        base_dir = path.resolve().parent
    for item in overrides:
        parts, value = parse_override(item)
        raw = _merge(raw, _nest(parts, value))
    ev = raw["evaluation"]
    if layouts:
        ev["layouts"] = list(layouts)
    if methods:
        ev["methods"] = list(methods)
    if seed_base is not None:
        ev["seed_base"] = seed_base
    if mode is not None:
        raw["llm"]["mode"] = mode
    if run_id is not None:
        raw["paths"]["run_id"] = run_id
    return validate(raw, base_dir)


def validate(raw: dict, base_dir: Path) -> RunConfig:
    try:
        env = EnvConfig(**raw["env"])
        llm = LlmConfig.from_mapping(raw["llm"])
        profiles = profiles_from_config(raw["policies"])
        embedding = EmbeddingMode(raw["retrieval"]["mode"])
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigInvalid(str(e)) from e

    fp = raw["fingerprint"]
    if not (isinstance(fp["bins"], int) and fp["bins"] >= 2):
        raise ConfigInvalid("fingerprint.bins must be an integer >= 2")
    if not (isinstance(fp["r"], int) and fp["r"] >= 1):
        raise ConfigInvalid("fingerprint.r must be a positive integer")
    ret = raw["retrieval"]
    if not (isinstance(ret["k"], int) and ret["k"] >= 1):
        raise ConfigInvalid("retrieval.k must be a positive integer")
    if len(ret["seeds"]) < ret["episodes_per_type"]:
        raise ConfigInvalid("retrieval.seeds must hold at least episodes_per_type seeds")
    if ret["episodes_per_type"] < 2:
        raise ConfigInvalid("retrieval.episodes_per_type must be >= 2")

    ev = raw["evaluation"]
    unknown = [m for m in ev["methods"] if m not in METHODS]
    if unknown:
        raise ConfigInvalid(f"unknown methods {unknown}; choose from {list(METHODS)}")
    for key in ("probe_length", "seed_groups"):
        if not (isinstance(ev[key], int) and ev[key] >= 1):
            raise ConfigInvalid(f"evaluation.{key} must be a positive integer")
    for P in [ev["probe_length"], *ev["probe_lengths"]]:
        if not 0 < P < env.horizon:
            raise ConfigInvalid(f"probe length {P} must be in (0, {env.horizon})")
    schedule = eval_seeds(ev["seed_groups"], ev["seed_base"])
    try:
        check_seed_hygiene([s for g in schedule for s, _ in g], ret["seeds"])
    except ValueError as e:
        raise ConfigInvalid(str(e)) from e

    layouts = []
    ldir = raw["paths"]["layouts_dir"]
    for name in ev["layouts"]:
        if ldir:
            f = Path(ldir)
            f = (f if f.is_absolute() else base_dir / f) / f"{name}.layout"
            if f.exists():
                layouts.append(layout_from_file(f))
                continue
        if name not in LAYOUT_NAMES:
            raise ConfigInvalid(f"unknown layout {name!r}")
        layouts.append(builtin_layout(name))
    if not layouts:
        raise ConfigInvalid("no layouts configured")
    return RunConfig(raw, env, llm, layouts, profiles, embedding, base_dir)


def make_client(cfg: RunConfig) -> LlmClient:
    return LlmClient(cfg.llm, responder=mock_responder if cfg.llm.mode is Mode.MOCK else None)


def _claim(path: Path, overwrite: bool) -> Path:
    if path.exists() and not overwrite:
        raise ArtifactExists(f"{path} already exists; pass --overwrite or choose another --run-id")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, text: str, overwrite: bool) -> None:
    _claim(path, overwrite).write_text(text, encoding="utf-8")


# -- stages -------------------------------------------------------------------


def cmd_collect(cfg: RunConfig, overwrite: bool = False) -> list[Path]:
    ret, fp = cfg.raw["retrieval"], cfg.raw["fingerprint"]
    targets = [cfg.db_path(l.name) for l in cfg.layouts]
    for t in targets:
        _claim(t, overwrite)
        _claim(meta_path(t), overwrite)
    client = make_client(cfg)
    for layout, path in zip(cfg.layouts, targets):
        db = collect_database(
            [layout],
            TYPES,
            ret["episodes_per_type"],
            cfg.raw["evaluation"]["probe_length"],
            ret["seeds"],
            cfg.env,
            r=fp["r"],
            bins=fp["bins"],
            mode=cfg.embedding,
            client=client,
            profiles=cfg.profiles,
        )
        db.save(path)
        click.echo(f"{layout.name}: {len(db)} records written to {path}")
    return targets


def load_db(cfg: RunConfig, layout: str) -> TrajectoryDB:
    path = cfg.db_path(layout)
    if not path.exists() or not meta_path(path).exists():
        raise MissingArtifact("retrieval", path, "collect")
    return TrajectoryDB.load(path)


def load_rubric(cfg: RunConfig, layout: str) -> Rubric:
    path = cfg.rubric_path(layout)
    if not path.exists():
        raise MissingArtifact("rubric", path, "build-rubric")
    return Rubric.from_json(path.read_text(encoding="utf-8"))


def cmd_build_rubric(cfg: RunConfig, overwrite: bool = False) -> list[Path]:
    fp = cfg.raw["fingerprint"]
    targets = [cfg.rubric_path(l.name) for l in cfg.layouts]
    dbs = [load_db(cfg, l.name) for l in cfg.layouts]
    for t in targets:
        _claim(t, overwrite)
    for layout, db, path in zip(cfg.layouts, dbs, targets):
        ranked = rank_features(db.dataset(), fp["bins"])
        selected = [n for n, _ in ranked[: fp["r"]]]
        rubric = build_rubric(db.dataset(), selected)
        path.write_text(rubric.to_json(), encoding="utf-8")
        click.echo(f"{layout.name}: top {fp['r']} features by mutual information (nats)")
        for name, mi in ranked[: fp["r"]]:
            click.echo(f"  {name:28s} {mi:.4f}")
    return targets


# every learned method reads the database (training data, exemplars) and the rubric
_NEEDS_ARTIFACTS = {"prototype", "collab", "recollab", "logreg", "plastic"}


def load_pipelines(cfg: RunConfig, methods, client: LlmClient) -> dict[str, Pipeline]:
    if not set(methods) & _NEEDS_ARTIFACTS:
        return {}
    ev = cfg.raw["evaluation"]
    out = {}
    for layout in cfg.layouts:
        db = load_db(cfg, layout.name)
        rubric = load_rubric(cfg, layout.name)
        if db.rubric != rubric:
            db = reindex(db, rubric, client)
        out[layout.name] = Pipeline(
            rubric,
            db,
            client,
            cfg.raw["retrieval"]["k"],
            ev["logreg_epochs"],
            ev["logreg_lr"],
            ev["logreg_l2"],
        )
    return out


def cmd_eval(cfg: RunConfig, overwrite: bool = False) -> Path:
    ev = cfg.raw["evaluation"]
    out = cfg.stage_dir("eval")
    names = ["episodes.jsonl", "summary.csv", "pareto.csv", "tables.txt"]
    for n in names:
        _claim(out / n, overwrite)
    client = make_client(cfg)
    pipes = load_pipelines(cfg, ev["methods"], client)
    episodes: list = []
    summaries = evaluate(
        ev["methods"],
        cfg.layouts,
        pipes,
        ev["seed_groups"],
        ev["probe_length"],
        cfg.env,
        ev["seed_base"],
        cfg.raw["retrieval"]["seeds"],
        cfg.profiles,
        log=episodes,
    )
    write_jsonl(episodes, out / "episodes.jsonl")
    (out / "summary.csv").write_text(summaries_csv(summaries), encoding="utf-8")
    (out / "pareto.csv").write_text(pareto_csv(summaries), encoding="utf-8")
    tables = "Classification accuracy\n\n" + accuracy_table(summaries) + "\nEpisodic return\n\n" + return_table(summaries)
    (out / "tables.txt").write_text(tables, encoding="utf-8")
    click.echo(tables, nl=False)
    return out


def cmd_ablate(cfg: RunConfig, which: str, overwrite: bool = False) -> Path:
    ev, ret, fp = cfg.raw["evaluation"], cfg.raw["retrieval"], cfg.raw["fingerprint"]
    out = cfg.stage_dir("ablate")
    if which == "probe":
        methods = ev["methods"] if len(ev["methods"]) == 1 else ["recollab"]
        method = methods[0]
        stem = f"probe_{method}"
    elif which == "k":
        method = "recollab"
        stem = "k"
    else:
        raise ConfigInvalid(f"unknown ablation {which!r}")
    csv_path, log_path = out / f"{stem}.csv", out / f"{stem}.episodes.jsonl"
    _claim(csv_path, overwrite)
    _claim(log_path, overwrite)
    client = make_client(cfg)
    episodes: list = []
    rows = []
    if which == "probe":
        kwargs = dict(
            episodes_per_type=ret["episodes_per_type"],
            db_seeds=ret["seeds"],
            r=fp["r"],
            bins=fp["bins"],
            k=ret["k"],
            llm=client,
            profiles=cfg.profiles,
            logreg_epochs=ev["logreg_epochs"],
            logreg_lr=ev["logreg_lr"],
            logreg_l2=ev["logreg_l2"],
        )
        for layout in cfg.layouts:
            rows += ablate_probe(
                method, layout, ev["probe_lengths"], ev["seed_groups"], cfg.env, ev["seed_base"], kwargs, episodes
            )
    else:
        pipes = load_pipelines(cfg, ["recollab"], client)
        for layout in cfg.layouts:
            rows += ablate_k(
                layout, ev["k_values"], ev["seed_groups"], ev["probe_length"], cfg.env, ev["seed_base"],
                pipes[layout.name], episodes,
            )
    text = ablation_csv(rows)
    csv_path.write_text(text, encoding="utf-8")
    write_jsonl(episodes, log_path)
    click.echo(text, nl=False)
    return csv_path


# -- click wiring -------------------------------------------------------------


def _common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML run configuration."),
        click.option("--layout", "layouts", multiple=True, help="Layout name (repeatable)."),
        click.option("--method", "methods", multiple=True, help="Method name (repeatable)."),
        click.option("--seed-base", type=int, default=None, help="First evaluation seed."),
        click.option("--mock/--live", "mock", default=None, help="Offline mock classifier or live service."),
        click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config value."),
        click.option("--run-id", default=None, help="Output subdirectory name."),
        click.option("--overwrite", is_flag=True, help="Replace existing outputs of this stage."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _config(config_path, layouts, methods, seed_base, mock, overrides, run_id) -> RunConfig:
    mode = None if mock is None else ("mock" if mock else "live")
    return load_config(config_path, overrides, layouts, methods, seed_base, mode, run_id)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    """Teammate-type inference pipeline."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


def _run(fn):
    try:
        fn()
    except CliError as e:
        click.echo(f"error[{e.kind}]: {e}", err=True)
        sys.exit(2)


@main.command()
@_common
def collect(config_path, layouts, methods, seed_base, mock, overrides, run_id, overwrite):
    """Collect the labeled probe database."""
    _run(lambda: cmd_collect(_config(config_path, layouts, methods, seed_base, mock, overrides, run_id), overwrite))


@main.command("build-rubric")
@_common
def build_rubric_cmd(config_path, layouts, methods, seed_base, mock, overrides, run_id, overwrite):
    """Select features by mutual information and write per-type prototypes."""
    _run(lambda: cmd_build_rubric(_config(config_path, layouts, methods, seed_base, mock, overrides, run_id), overwrite))


@main.command("eval")
@_common
def eval_cmd(config_path, layouts, methods, seed_base, mock, overrides, run_id, overwrite):
    """Evaluate methods and write episode logs, summaries and tables."""
    _run(lambda: cmd_eval(_config(config_path, layouts, methods, seed_base, mock, overrides, run_id), overwrite))


@main.command()
@click.argument("which", type=click.Choice(["probe", "k"]))
@_common
def ablate(which, config_path, layouts, methods, seed_base, mock, overrides, run_id, overwrite):
    """Sweep probe length (probe) or retrieval count (k)."""
    _run(lambda: cmd_ablate(_config(config_path, layouts, methods, seed_base, mock, overrides, run_id), which, overwrite))


if __name__ == "__main__":
    main()
