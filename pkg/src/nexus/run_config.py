"""
Run configuration.

One JSON document validated by pydantic. Values come from, in increasing
precedence: the config file, ``--set dotted.key=value`` overrides, and
``NEXUS_<SECTION>__<KEY>`` environment variables.
"""

from __future__ import annotations

import json
import os
import shlex
from pathlib import Path
from typing import TYPE_CHECKING, Any

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from nexus.codeact import InnerBudgets
from nexus.constants import defaults
from nexus.constants.enums import BackendKind, LoopMode
from nexus.constants.keywords import ENV_MODEL_KEY, ENV_MODEL_URL, ENV_PREFIX
from nexus.errors import ConfigError
from nexus.model_backend import ChatParams
from nexus.planning import Budgets
from nexus.sandbox import ExecutionLimits
from nexus.utils import canonical_json, sha256_hex

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

SKILLS_FILE = "skills.jsonl"
OBJECTS_DIR = "objects"
WORKSPACES_DIR = "workspaces"
# never treated as config overrides
_CREDENTIAL_VARS = frozenset({ENV_MODEL_URL, ENV_MODEL_KEY})


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BudgetsConfig(_Section):
    max_outer_iterations: int = Field(default=defaults.MAX_OUTER_ITERATIONS, ge=1)
    max_subtasks: int = Field(default=defaults.MAX_SUBTASKS, ge=1)
    max_steps: int = Field(default=defaults.MAX_STEPS, ge=1)
    max_consecutive_errors: int = Field(default=defaults.MAX_CONSECUTIVE_ERRORS, ge=1)


class BackendConfig(_Section):
    kind: BackendKind = BackendKind.LIVE
    fixture: Path | None = None
    script: Path | None = None
    model_name: str = "default"
    temperature: float = 0.0
    max_tokens: int | None = None

    @model_validator(mode="after")
    def _source_for_kind(self) -> BackendConfig:
        if self.kind is BackendKind.REPLAY and self.fixture is None:
            msg = "a replay backend needs backend.fixture"
            raise ValueError(msg)
        if self.kind is BackendKind.SCRIPTED and self.script is None:
            msg = "a scripted backend needs backend.script"
            raise ValueError(msg)
        return self


class SandboxConfig(_Section):
    interpreter_cmd: list[str] = Field(
        default_factory=lambda: list(defaults.SANDBOX_INTERPRETER_CMD),
    )
    timeout_s: float = Field(default=defaults.SANDBOX_TIMEOUT_S, gt=0)
    max_output_bytes: int = Field(default=defaults.SANDBOX_MAX_OUTPUT_BYTES, gt=0)
    network_allowed: bool = False
    workspace_quota_bytes: int = Field(
        default=defaults.SANDBOX_WORKSPACE_QUOTA_BYTES,
        gt=0,
    )
    archive_on_reset: bool = False

    @field_validator("interpreter_cmd", mode="before")
    @classmethod
    def _split_command(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = shlex.split(value)
        if not value:
            msg = "interpreter_cmd must not be empty"
            raise ValueError(msg)
        return value


class CapsConfig(_Section):
    summary_cap: int = Field(
        default=defaults.SUMMARY_CAP,
        ge=defaults.MIN_SUMMARY_CAP,
    )
    planner_context_cap: int = Field(default=defaults.PLANNER_CONTEXT_CAP, gt=0)
    inline_cap: int = Field(default=defaults.INLINE_CAP, gt=0)
    tool_context_cap: int = Field(default=defaults.TOOL_CONTEXT_CAP, gt=0)


class RetrievalConfig(_Section):
    k: int = Field(default=defaults.RETRIEVAL_K, ge=1)


class EvolveConfig(_Section):
    distill_threshold: float = Field(default=defaults.DISTILL_THRESHOLD, ge=0, le=1)
    skills_in_context: int = Field(default=defaults.SKILLS_IN_CONTEXT, ge=0)
    critic_with_model: bool = True
    compress_with_model: bool = False


class RunConfig(_Section):
    loop_mode: LoopMode = LoopMode.DUAL
    tools_dir: Path
    store_dir: Path
    max_parallel_subtasks: int = Field(default=1, ge=1)
    protocol_retries: int = Field(default=defaults.PROTOCOL_RETRIES, ge=0)
    store_quota_bytes: int = Field(default=defaults.STORE_QUOTA_BYTES, gt=0)
    budgets: BudgetsConfig = Field(default_factory=BudgetsConfig)
    backend: BackendConfig = Field(default_factory=BackendConfig)
    sandbox: SandboxConfig = Field(default_factory=SandboxConfig)
    caps: CapsConfig = Field(default_factory=CapsConfig)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    evolve: EvolveConfig = Field(default_factory=EvolveConfig)

    @property
    def objects_dir(self) -> Path:
        return self.store_dir / OBJECTS_DIR

    @property
    def workspaces_dir(self) -> Path:
        return self.store_dir / WORKSPACES_DIR

    @property
    def skills_path(self) -> Path:
        return self.store_dir / SKILLS_FILE

    def planner_budgets(self) -> Budgets:
        return Budgets(
            max_outer_iterations=self.budgets.max_outer_iterations,
            max_subtasks=self.budgets.max_subtasks,
        )

    def inner_budgets(self) -> InnerBudgets:
        max_steps = self.budgets.max_steps
        if self.loop_mode is LoopMode.OUTER_ONLY:
            max_steps = defaults.OUTER_ONLY_MAX_STEPS
        return InnerBudgets(
            max_steps=max_steps,
            max_consecutive_errors=self.budgets.max_consecutive_errors,
        )

    def limits(self) -> ExecutionLimits:
        return ExecutionLimits(
            wall_timeout_s=self.sandbox.timeout_s,
            max_output_bytes=self.sandbox.max_output_bytes,
            network_allowed=self.sandbox.network_allowed,
            workspace_quota_bytes=self.sandbox.workspace_quota_bytes,
        )

    def chat_params(self) -> ChatParams:
        return ChatParams(
            temperature=self.backend.temperature,
            max_tokens=self.backend.max_tokens,
            model_name=self.backend.model_name,
        )

    def digest(self) -> str:
        """
        Hash of every behaviour-relevant setting.

        Locations (store, tools, fixture and script paths) are left out, so
        the same setup run from another directory gets the same run ids.
        """
        document = self.model_dump(
            mode="json",
            exclude={
                "tools_dir": True,
                "store_dir": True,
                "backend": {"fixture", "script"},
            },
        )
        return sha256_hex(canonical_json(document))


# --------------------------------------------------------------------- #
# Loading                                                               #
# --------------------------------------------------------------------- #
def load_config(
    path: Path,
    overrides: Sequence[str] = (),
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """
    Load, override, validate and resolve a config file.

    Raises:
        ConfigError: When the file is missing or invalid, an override is
            malformed, or ``store_dir`` / ``tools_dir`` do not exist.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        msg = f"config file not found: {path}"
        raise ConfigError(msg) from None
    except json.JSONDecodeError as exc:
        msg = f"config file {path} is not valid JSON: {exc}"
        raise ConfigError(msg) from None
    if not isinstance(raw, dict):
        msg = f"config file {path} must hold a JSON object"
        raise ConfigError(msg)
    return build_config(raw, path.parent, overrides, os.environ if env is None else env)


def build_config(
    raw: dict[str, Any],
    base_dir: Path,
    overrides: Sequence[str] = (),
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    document = json.loads(json.dumps(raw))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            msg = f"override {item!r} is not of the form dotted.key=value"
            raise ConfigError(msg)
        _set_dotted(document, key.strip().split("."), _parse_value(value))
    for key, value in sorted((env or {}).items()):
        if key.startswith(ENV_PREFIX) and key not in _CREDENTIAL_VARS:
            dotted = key[len(ENV_PREFIX) :].lower().split("__")
            if dotted[0] in RunConfig.model_fields:
                _set_dotted(document, dotted, _parse_value(value))

    try:
        config = RunConfig.model_validate(document)
    except ValidationError as exc:
        msg = "invalid config: " + "; ".join(
            f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()
        )
        raise ConfigError(msg) from None
    return _resolve(config, Path(base_dir))


def _set_dotted(document: dict[str, Any], keys: list[str], value: Any) -> None:
    _check_path(keys)
    node = document
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            msg = f"cannot set {'.'.join(keys)}: {key} is not a section"
            raise ConfigError(msg)
        node = child
    node[keys[-1]] = value


def _check_path(keys: list[str]) -> None:
    """Reject a dotted key that names no field of the config schema."""
    dotted = ".".join(keys)
    model: type[BaseModel] = RunConfig
    for depth, key in enumerate(keys):
        field = model.model_fields.get(key)
        if field is None:
            msg = f"cannot set {dotted}: unknown key {'.'.join(keys[: depth + 1])}"
            raise ConfigError(msg)
        if depth == len(keys) - 1:
            return
        section = field.annotation
        if not (isinstance(section, type) and issubclass(section, _Section)):
            msg = f"cannot set {dotted}: {key} is not a section"
            raise ConfigError(msg)
        model = section


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _resolve(config: RunConfig, base_dir: Path) -> RunConfig:
    def absolute(path: Path) -> Path:
        return path if path.is_absolute() else (base_dir / path).resolve()

    fixture, script = config.backend.fixture, config.backend.script
    backend = config.backend.model_copy(
        update={
            "fixture": absolute(fixture) if fixture else None,
            "script": absolute(script) if script else None,
        },
    )
    config = config.model_copy(
        update={
            "tools_dir": absolute(config.tools_dir),
            "store_dir": absolute(config.store_dir),
            "backend": backend,
        },
    )
    for name in ("store_dir", "tools_dir"):
        if not getattr(config, name).is_dir():
            msg = f"{name} does not exist: {getattr(config, name)}"
            raise ConfigError(msg)
    if backend.script is not None and not backend.script.is_file():
        msg = f"backend.script does not exist: {backend.script}"
        raise ConfigError(msg)
    return config
