"""
Tool registry and intent-aware tool retrieval.

Retrieval runs in three stages: domain filtering against the intent, lexical
relevance scoring of the survivors against the subtask goal plus the
intent's tool cues, and rendering of the top tools into a prompt block.
"""

from __future__ import annotations

import json
import logging
import math
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Protocol

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from rank_bm25 import BM25Okapi

from nexus.builtin_tools import call_builtin
from nexus.constants import defaults
from nexus.constants.domains import DOMAINS, normalize_domain
from nexus.constants.enums import EntrypointKind, ToolClass
from nexus.constants.regexps import TOKEN_RE, TOOL_ID_RE
from nexus.errors import (
    DuplicateTool,
    InvalidManifest,
    InvalidToolInput,
    NoCandidates,
    PreconditionViolation,
    ToolError,
    UnknownTool,
)
from nexus.utils import canonical_json, first_line

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from nexus.planning import StructuredIntent

logger = logging.getLogger(__name__)

INPUT_PLACEHOLDER = "{input_json}"
FILTER_EXEMPT = frozenset({ToolClass.LITERATURE_RETRIEVAL, ToolClass.GENERAL_UTILITY})


# --------------------------------------------------------------------- #
# Manifest                                                              #
# --------------------------------------------------------------------- #
class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IOField(_Strict):
    name: str = Field(min_length=1)
    type: str = Field(min_length=1)
    required: bool = True


class IOSpec(_Strict):
    inputs: list[IOField] = Field(default_factory=list)
    output: str = Field(min_length=1)


class ExecutionConstraints(_Strict):
    timeout_s: float = Field(default=defaults.SANDBOX_TIMEOUT_S, gt=0)
    network_allowed: bool = False


class Entrypoint(_Strict):
    kind: EntrypointKind
    command: str | None = None
    function: str | None = None

    @model_validator(mode="after")
    def _check_kind(self) -> Entrypoint:
        if self.kind is EntrypointKind.SUBPROCESS and (
            not self.command or INPUT_PLACEHOLDER not in self.command
        ):
            msg = f"subprocess entrypoint needs a command with {INPUT_PLACEHOLDER}"
            raise ValueError(msg)
        if self.kind is EntrypointKind.BUILTIN and not self.function:
            msg = "builtin entrypoint needs a function name"
            raise ValueError(msg)
        return self


class ToolManifest(_Strict):
    """One tool's discovery record; a manifest file holds exactly these fields."""

    tool_id: str
    name: str = Field(min_length=1)
    tool_class: ToolClass
    domain_tags: list[str] = Field(min_length=1)
    description: str
    io_spec: IOSpec
    execution_constraints: ExecutionConstraints = Field(
        default_factory=ExecutionConstraints,
    )
    entrypoint: Entrypoint

    @field_validator("tool_id")
    @classmethod
    def _check_id(cls, tool_id: str) -> str:
        if not TOOL_ID_RE.match(tool_id):
            msg = f"invalid tool_id {tool_id!r}"
            raise ValueError(msg)
        return tool_id

    @field_validator("domain_tags")
    @classmethod
    def _check_tags(cls, tags: list[str]) -> list[str]:
        normalized = set()
        for tag in tags:
            domain = normalize_domain(tag)
            if domain is None:
                msg = f"unknown domain tag {tag!r}; expected one of {sorted(DOMAINS)}"
                raise ValueError(msg)
            normalized.add(domain)
        return sorted(normalized)

    @field_validator("description")
    @classmethod
    def _check_description(cls, description: str) -> str:
        if not description.strip():
            msg = "description must not be empty"
            raise ValueError(msg)
        return description

    @property
    def document(self) -> str:
        return f"{self.name} {self.description}"


def parse_manifest(data: dict[str, Any] | str | bytes) -> ToolManifest:
    """Validate a manifest document, raising :class:`InvalidManifest`."""
    try:
        if isinstance(data, dict):
            return ToolManifest.model_validate(data)
        return ToolManifest.model_validate_json(data)
    except ValidationError as exc:
        msg = f"invalid manifest: {exc.errors(include_url=False)}"
        raise InvalidManifest(msg) from exc


# --------------------------------------------------------------------- #
# Registry                                                              #
# --------------------------------------------------------------------- #
@dataclass(slots=True, frozen=True)
class RankedTool:
    manifest: ToolManifest
    score: float


@dataclass(slots=True, frozen=True)
class RankedTools:
    entries: tuple[RankedTool, ...]
    k: int

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[RankedTool]:
        return iter(self.entries)

    @property
    def tool_ids(self) -> list[str]:
        return [e.manifest.tool_id for e in self.entries]


class Scorer(Protocol):
    def __call__(self, documents: list[list[str]], query: list[str]) -> list[float]: ...


class ToolRegistry:
    """Thread-safe registry; reads work on immutable snapshots."""

    def __init__(self) -> None:
        self._tools: dict[str, ToolManifest] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._tools)

    def __contains__(self, tool_id: object) -> bool:
        return tool_id in self._tools

    def register_tool(self, manifest: ToolManifest | dict[str, Any]) -> str:
        """
        Add a manifest and return its id.

        Raises:
            InvalidManifest: When a raw document fails validation.
            DuplicateTool: When the id is already registered.
        """
        if not isinstance(manifest, ToolManifest):
            manifest = parse_manifest(manifest)
        with self._lock:
            if manifest.tool_id in self._tools:
                msg = f"tool {manifest.tool_id!r} is already registered"
                raise DuplicateTool(msg)
            self._tools[manifest.tool_id] = manifest
        logger.debug("registered tool %s", manifest.tool_id)
        return manifest.tool_id

    def load_dir(self, directory: Path) -> list[str]:
        """Register every ``*.json`` manifest of ``directory`` in file-name order."""
        ids = []
        for path in sorted(Path(directory).glob("*.json")):
            try:
                manifest = parse_manifest(path.read_bytes())
            except InvalidManifest as exc:
                msg = f"{path.name}: {exc}"
                raise InvalidManifest(msg) from exc
            ids.append(self.register_tool(manifest))
        logger.info("loaded %d tool manifests from %s", len(ids), directory)
        return ids

    def get(self, tool_id: str) -> ToolManifest:
        try:
            return self._tools[tool_id]
        except KeyError:
            msg = f"no tool {tool_id!r}"
            raise UnknownTool(msg) from None

    def snapshot(self) -> tuple[ToolManifest, ...]:
        with self._lock:
            return tuple(self._tools[k] for k in sorted(self._tools))

    def retrieve(
        self,
        intent: StructuredIntent,
        subtask_goal: str,
        k: int = defaults.RETRIEVAL_K,
        scorer: Scorer | None = None,
    ) -> RankedTools:
        return retrieve(self.snapshot(), intent, subtask_goal, k, scorer)


# --------------------------------------------------------------------- #
# Retrieval                                                             #
# --------------------------------------------------------------------- #
def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


class _PositiveIdfBM25(BM25Okapi):
    """Okapi BM25 with idf = ln(1 + (N - n + 0.5) / (n + 0.5)), never negative."""

    def _calc_idf(self, nd: dict[str, int]) -> None:
        for word, freq in nd.items():
            ratio = (self.corpus_size - freq + 0.5) / (freq + 0.5)
            self.idf[word] = math.log(1 + ratio)


def bm25_scores(documents: list[list[str]], query: list[str]) -> list[float]:
    """Score every tokenized document against the query tokens."""
    if not any(documents):
        return [0.0] * len(documents)
    index = _PositiveIdfBM25(documents, k1=defaults.BM25_K1, b=defaults.BM25_B)
    return [float(s) for s in index.get_scores(query)]


def domain_filter(
    tools: Sequence[ToolManifest], domains: Sequence[str] | set[str]
) -> list[ToolManifest]:
    """Keep exempt classes and domain-specific tools sharing a domain."""
    wanted = set(domains)
    return [
        t
        for t in tools
        if t.tool_class in FILTER_EXEMPT or wanted.intersection(t.domain_tags)
    ]


def retrieve(
    tools: Sequence[ToolManifest],
    intent: StructuredIntent,
    subtask_goal: str,
    k: int = defaults.RETRIEVAL_K,
    scorer: Scorer | None = None,
) -> RankedTools:
    """
    Return the ``k`` most relevant tools that survive domain filtering.

    Ties are broken by ``tool_id`` ascending; scores are rounded so float
    noise never reorders equal scores.

    Raises:
        PreconditionViolation: When ``k`` < 1.
        NoCandidates: When filtering leaves nothing.
    """
    if k < 1:
        msg = f"k must be at least 1, got {k}"
        raise PreconditionViolation(msg)

    survivors = domain_filter(tools, intent.domains)
    if not survivors:
        msg = f"no tool matches domains {sorted(intent.domains)}"
        raise NoCandidates(msg)

    query = tokenize(" ".join([subtask_goal, *intent.tool_cues]))
    scores = (scorer or bm25_scores)([tokenize(t.document) for t in survivors], query)
    ranked = sorted(
        (
            RankedTool(manifest=t, score=round(s, defaults.SCORE_DECIMALS))
            for t, s in zip(survivors, scores, strict=True)
        ),
        key=lambda r: (-r.score, r.manifest.tool_id),
    )
    return RankedTools(entries=tuple(ranked[:k]), k=k)


# --------------------------------------------------------------------- #
# Context rendering                                                     #
# --------------------------------------------------------------------- #
TOOL_BLOCK_HEADER = (
    "Available tools. Call one from code, e.g. with subprocess, using the "
    "command shown; it prints a JSON result.\n"
)


@dataclass(slots=True, frozen=True)
class ToolContextBlock:
    text: str = ""
    tool_ids: tuple[str, ...] = field(default=())

    @property
    def size(self) -> int:
        return len(self.text.encode())


def invocation_stub(manifest: ToolManifest) -> str:
    example = canonical_json({f.name: f"<{f.type}>" for f in manifest.io_spec.inputs})
    return f"nexus tools call {manifest.tool_id} --input '{example}'"


def render_tool(manifest: ToolManifest) -> str:
    inputs = ", ".join(
        f"{f.name}: {f.type}{'' if f.required else ' (optional)'}"
        for f in manifest.io_spec.inputs
    )
    return (
        f"### {manifest.name} [{manifest.tool_id}]\n"
        f"{manifest.description.strip()}\n"
        f"inputs: {inputs or 'none'}\n"
        f"output: {manifest.io_spec.output}\n"
        f"call: {invocation_stub(manifest)}\n"
    )


def render_context(
    tools: RankedTools,
    cap: int = defaults.TOOL_CONTEXT_CAP,
) -> ToolContextBlock:
    """
    Render ranked tools into a prompt block of at most ``cap`` bytes.

    Lowest-ranked tools are dropped first until the block fits; the result
    depends only on ``tools`` and ``cap``.
    """
    if not len(tools):
        msg = "cannot render an empty tool list"
        raise PreconditionViolation(msg)

    sections = [render_tool(e.manifest) for e in tools]
    ids = tools.tool_ids
    while sections:
        text = TOOL_BLOCK_HEADER + "\n".join(sections)
        if len(text.encode()) <= cap:
            return ToolContextBlock(text=text, tool_ids=tuple(ids))
        sections.pop()
        ids.pop()
    logger.warning("tool context cap %d admits no tool", cap)
    return ToolContextBlock()


# --------------------------------------------------------------------- #
# Invocation                                                            #
# --------------------------------------------------------------------- #
def invoke_tool(manifest: ToolManifest, inputs: dict[str, Any]) -> Any:
    """
    Run a tool and return its JSON result.

    Raises:
        InvalidToolInput: When a required input is missing.
        ToolError: When the tool fails or times out.
    """
    missing = [
        f.name
        for f in manifest.io_spec.inputs
        if f.required and f.name not in inputs
    ]
    if missing:
        msg = f"{manifest.tool_id}: missing required inputs {missing}"
        raise InvalidToolInput(msg)

    entry = manifest.entrypoint
    if entry.kind is EntrypointKind.BUILTIN:
        return call_builtin(str(entry.function), inputs)

    payload = json.dumps(inputs, sort_keys=True)
    command = shlex.split(str(entry.command))
    argv = [arg.replace(INPUT_PLACEHOLDER, payload) for arg in command]
    try:
        done = subprocess.run(
            argv,
            capture_output=True,
            text=True,
            timeout=manifest.execution_constraints.timeout_s,
            check=False,
        )
    except subprocess.TimeoutExpired as exc:
        msg = f"{manifest.tool_id} timed out after {exc.timeout}s"
        raise ToolError(msg) from exc
    except OSError as exc:
        msg = f"{manifest.tool_id} could not start: {exc}"
        raise ToolError(msg) from exc

    if done.returncode != 0:
        msg = f"{manifest.tool_id} exited {done.returncode}: {first_line(done.stderr)}"
        raise ToolError(msg)
    try:
        return json.loads(done.stdout)
    except json.JSONDecodeError:
        return done.stdout.strip()
