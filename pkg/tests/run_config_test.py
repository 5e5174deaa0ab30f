"""Unit tests for run_config.py."""

import json
from pathlib import Path

import pytest

from nexus.constants.enums import BackendKind, LoopMode
from nexus.errors import ConfigError
from nexus.run_config import build_config, load_config
from tests.conftest import MANIFESTS_DIR, make_config

DIRS = '{"tools_dir": ".", "store_dir": "."'


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    (tmp_path / "store").mkdir()
    path = tmp_path / "nexus.json"
    path.write_text(
        json.dumps(
            {
                "tools_dir": str(MANIFESTS_DIR),
                "store_dir": "store",
                "backend": {"kind": "live"},
            },
        ),
        encoding="utf-8",
    )
    return path


def test_defaults_and_relative_paths(config_file: Path) -> None:
    config = load_config(config_file, env={})
    assert config.loop_mode is LoopMode.DUAL
    assert config.store_dir == (config_file.parent / "store").resolve()
    assert config.skills_path == config.store_dir / "skills.jsonl"
    assert config.budgets.max_steps == 10
    assert config.sandbox.network_allowed is False


def test_overrides_are_parsed_as_json(config_file: Path) -> None:
    config = load_config(
        config_file,
        ["budgets.max_steps=4", "loop_mode=inner_only", "backend.model_name=small"],
        env={},
    )
    assert config.budgets.max_steps == 4
    assert config.loop_mode is LoopMode.INNER_ONLY
    assert config.backend.model_name == "small"


def test_environment_wins_over_overrides(config_file: Path) -> None:
    env = {
        "NEXUS_SANDBOX__TIMEOUT_S": "5",
        "NEXUS_MODEL_URL": "http://model.invalid",
        "NEXUS_MODEL_KEY": "secret",
        "OTHER": "1",
    }
    config = load_config(config_file, ["sandbox.timeout_s=9"], env=env)
    assert config.sandbox.timeout_s == 5.0
    assert config.limits().wall_timeout_s == 5.0


def test_interpreter_command_may_be_a_string(config_file: Path) -> None:
    override = 'sandbox.interpreter_cmd="python3 -u -"'
    config = load_config(config_file, [override], env={})
    assert config.sandbox.interpreter_cmd == ["python3", "-u", "-"]


@pytest.mark.parametrize(
    ("content", "message"),
    [
        ("{not json", "not valid JSON"),
        ("[1, 2]", "must hold a JSON object"),
        ('{"tools_dir": "."}', "store_dir"),
        (DIRS + ', "colour": "red"}', "colour"),
        ('{"tools_dir": ".", "store_dir": "missing"}', "store_dir does not exist"),
        (DIRS + ', "backend": {"kind": "replay"}}', "backend.fixture"),
        (DIRS + ', "budgets": {"max_steps": 0}}', "budgets.max_steps"),
        (DIRS + ', "caps": {"summary_cap": 50}}', "caps.summary_cap"),
    ],
)
def test_invalid_configs(tmp_path: Path, content: str, message: str) -> None:
    path = tmp_path / "nexus.json"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError, match=message):
        load_config(path, env={})


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.json", env={})


def test_malformed_override(config_file: Path) -> None:
    with pytest.raises(ConfigError, match="dotted.key=value"):
        load_config(config_file, ["budgets.max_steps"], env={})


@pytest.mark.parametrize("override", ["loop_mode.x=1", "budgets.max_steps.n=2"])
def test_override_through_a_scalar(config_file: Path, override: str) -> None:
    with pytest.raises(ConfigError, match="not a section"):
        load_config(config_file, [override], env={})


@pytest.mark.parametrize(
    ("override", "unknown"),
    [("colour=red", "colour"), ("sandbox.nice=5", "sandbox.nice")],
)
def test_override_of_an_unknown_key(
    config_file: Path,
    override: str,
    unknown: str,
) -> None:
    with pytest.raises(ConfigError, match=f"unknown key {unknown}"):
        load_config(config_file, [override], env={})


def test_scripted_backend_needs_an_existing_script(tmp_path: Path) -> None:
    raw = {
        "tools_dir": str(MANIFESTS_DIR),
        "store_dir": str(tmp_path),
        "backend": {"kind": "scripted", "script": "absent.json"},
    }
    with pytest.raises(ConfigError, match="backend.script does not exist"):
        build_config(raw, tmp_path, env={})


def test_outer_only_runs_single_steps(tmp_path: Path) -> None:
    assert make_config(tmp_path).inner_budgets().max_steps == 10
    assert make_config(tmp_path, loop_mode="outer_only").inner_budgets().max_steps == 1


def test_digest_ignores_locations(tmp_path: Path) -> None:
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first = make_config(tmp_path / "a")
    second = make_config(tmp_path / "b")
    assert first.store_dir != second.store_dir
    assert first.backend.kind is BackendKind.SCRIPTED
    assert first.digest() == second.digest()
    tighter = make_config(tmp_path / "a", budgets={"max_steps": 3})
    assert tighter.digest() != first.digest()
