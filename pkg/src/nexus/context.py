"""
Sparse context management.

Keeps the planner's prompt small: finished subtasks are compressed into
:class:`SubTaskSummary` records, and the planner context is assembled from
the intent, the outline, skill excerpts, the newest summaries that fit and
a short state section.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

from pydantic import BaseModel, Field

from nexus.constants import defaults
from nexus.constants.enums import SubTaskStatus
from nexus.constants.keywords import PURPOSE_COMPRESS
from nexus.constants.prompts import COMPRESS_SYSTEM, ELISION_MARKER
from nexus.constants.regexps import ASSIGNMENT_RE, ERROR_LINE_RE
from nexus.errors import ModelError, PreconditionViolation
from nexus.model_backend import ChatRequest, complete_json
from nexus.object_store import ObjectRef
from nexus.utils import clip_text, first_line

if TYPE_CHECKING:
    from collections.abc import Sequence

    from nexus.evolve import Skill
    from nexus.model_backend import ModelBackend
    from nexus.planning import PlannerState
    from nexus.trace import SubTaskResult, SubTaskTrace

logger = logging.getLogger(__name__)

_LIST_FIELDS = ("key_findings", "failure_modes", "critical_assumptions")


class SubTaskSummary(BaseModel):
    """Compressed result of one subtask; the only thing the planner sees of it."""

    subtask_id: str
    status: SubTaskStatus
    goal: str = ""
    key_findings: list[str] = Field(default_factory=list)
    failure_modes: list[str] = Field(default_factory=list)
    critical_assumptions: list[str] = Field(default_factory=list)
    parameter_configurations: dict[str, str] = Field(default_factory=dict)
    solution_text: str | None = None
    artifact_refs: list[ObjectRef] = Field(default_factory=list)
    tools_used: list[str] = Field(default_factory=list)
    truncated: bool = False
    char_len: int = 0

    def render(self) -> str:
        lines = [f"[subtask {self.subtask_id}] status={self.status.value}"]
        if self.goal:
            lines.append(f"goal: {self.goal}")
        if self.solution_text is not None:
            lines.append(f"solution: {self.solution_text}")
        for name in _LIST_FIELDS:
            items = getattr(self, name)
            if items:
                lines.append(name.replace("_", " ") + ":")
                lines.extend(f"- {item}" for item in items)
        if self.parameter_configurations:
            params = self.parameter_configurations.items()
            lines.append(f"parameters: {', '.join(f'{k}={v}' for k, v in params)}")
        if self.tools_used:
            lines.append(f"tools used: {', '.join(self.tools_used)}")
        if self.artifact_refs:
            lines.append(f"artifacts: {' '.join(r.url for r in self.artifact_refs)}")
        return "\n".join(lines)


class CompressionReply(BaseModel):
    key_findings: list[str] = Field(default_factory=list)
    critical_assumptions: list[str] = Field(default_factory=list)


# --------------------------------------------------------------------- #
# Trace compression                                                     #
# --------------------------------------------------------------------- #
def compress_trace(  # noqa: PLR0913
    trace: SubTaskTrace,
    result: SubTaskResult,
    cap: int = defaults.SUMMARY_CAP,
    model: ModelBackend | None = None,
    *,
    trace_ref: ObjectRef | None = None,
    retries: int = defaults.PROTOCOL_RETRIES,
) -> SubTaskSummary:
    """
    Compress a finished subtask into a summary of at most ``cap`` characters.

    The deterministic extractor always runs; a model, when given, writes the
    key findings and critical assumptions. Model failures fall back to the
    extractor's findings.
    """
    if not trace.steps:
        empty = SubTaskSummary(subtask_id=result.subtask_id, status=result.status)
        return _fit(empty, cap)

    findings = _extract_findings(trace, result)
    assumptions: list[str] = []
    if model is not None:
        prompt = render_trace(trace, result)
        try:
            reply = complete_json(
                model,
                ChatRequest.of(COMPRESS_SYSTEM, prompt, PURPOSE_COMPRESS),
                CompressionReply,
                retries,
            )
        except ModelError as exc:
            logger.warning(
                "compression of %s fell back to extraction: %s",
                trace.subtask_id,
                exc,
            )
        else:
            findings, assumptions = reply.key_findings, reply.critical_assumptions

    observations = [obs for step in trace.steps for obs in step.observations]
    refs = [trace_ref] if trace_ref else []
    refs += [ref for obs in observations for ref in obs.artifact_refs]
    code = [a.text for step in trace.steps for a in step.code_actions]
    summary = SubTaskSummary(
        subtask_id=result.subtask_id,
        status=result.status,
        goal=clip_text(trace.goal, defaults.SUMMARY_ITEM_CAP),
        key_findings=_clip_items(findings),
        failure_modes=_clip_items(_failure_modes(trace, result)),
        critical_assumptions=_clip_items(assumptions),
        parameter_configurations=_parameters(trace),
        solution_text=(
            clip_text(result.solution_text, defaults.SUMMARY_ITEM_CAP)
            if result.solution_text is not None
            else None
        ),
        artifact_refs=list(dict.fromkeys(refs)),
        tools_used=[t for t in trace.tool_ids if any(t in text for text in code)],
    )
    return _fit(summary, cap)


def render_trace(trace: SubTaskTrace, result: SubTaskResult) -> str:
    """Plain-text view of a trace with previews only, for the compression model."""
    cap = defaults.SUMMARY_ITEM_CAP
    parts = [f"Goal: {trace.goal}", f"Status: {result.status.value}"]
    for step in trace.steps:
        parts.append(f"--- step {step.step_index}")
        parts.append(clip_text(step.model_reply, defaults.INLINE_CAP))
        for obs in step.observations:
            stdout = clip_text(obs.stdout_preview, cap)
            parts.append(f"[exit {obs.exit_status}] {stdout}")
            if obs.stderr_preview:
                parts.append(f"[stderr] {clip_text(obs.stderr_preview, cap)}")
        if step.error:
            parts.append(f"[error] {step.error}")
    return "\n".join(parts)


def _extract_findings(trace: SubTaskTrace, result: SubTaskResult) -> list[str]:
    findings = []
    if result.solution_text is not None:
        findings.append(f"solution: {result.solution_text}")
    outputs = [
        first_line(obs.stdout_preview)
        for step in trace.steps
        for obs in step.observations
        if obs.ok and obs.stdout_preview.strip()
    ]
    if outputs:
        findings.append(f"last output: {outputs[-1]}")
    return findings


def _failure_modes(trace: SubTaskTrace, result: SubTaskResult) -> list[str]:
    modes: list[str] = []
    for step in trace.steps:
        if step.error:
            modes.append(first_line(step.error))
        for obs in step.observations:
            if obs.timed_out:
                modes.append("TimeoutError: execution exceeded the wall-clock limit")
            elif not obs.ok:
                error = _error_line(obs.stderr_preview)
                modes.append(error or f"exit status {obs.exit_status}")
    if result.status is not SubTaskStatus.SOLVED and not modes:
        ended = f"subtask ended with status {result.status.value}"
        modes.append(result.failure or ended)
    return list(dict.fromkeys(modes))


def _error_line(stderr: str) -> str:
    matches = [
        m.group(0).strip()
        for line in stderr.splitlines()
        if (m := ERROR_LINE_RE.match(line))
    ]
    return matches[-1] if matches else first_line(stderr)


def _parameters(trace: SubTaskTrace) -> dict[str, str]:
    params: dict[str, str] = {}
    for step in trace.steps:
        for action in step.code_actions:
            for line in action.text.splitlines():
                match = ASSIGNMENT_RE.match(line)
                if match:
                    name, value = match.groups()
                    params.pop(name, None)
                    params[name] = clip_text(value, defaults.PARAMETER_VALUE_CAP)
    return params


def _clip_items(items: Sequence[str]) -> list[str]:
    return [clip_text(item, defaults.SUMMARY_ITEM_CAP) for item in items]


def _fit(summary: SubTaskSummary, cap: int) -> SubTaskSummary:
    """Drop list items, largest list first, until the rendered summary fits."""
    data = summary.model_copy(deep=True)
    header = SubTaskSummary(subtask_id=data.subtask_id, status=data.status)
    if len(header.render()) > cap:
        msg = f"summary cap {cap} is below the header of subtask {data.subtask_id!r}"
        raise PreconditionViolation(msg)
    keep_failure = data.status is not SubTaskStatus.SOLVED and bool(data.failure_modes)

    def floor(name: str) -> int:
        return 1 if name == "failure_modes" and keep_failure else 0

    while len(data.render()) > cap:
        candidates = {
            name: sum(map(len, getattr(data, name)))
            for name in _LIST_FIELDS
            if len(getattr(data, name)) > floor(name)
        }
        candidates["parameter_configurations"] = sum(
            len(k) + len(v) for k, v in data.parameter_configurations.items()
        )
        candidates["artifact_refs"] = sum(len(r.url) for r in data.artifact_refs)
        candidates["tools_used"] = sum(map(len, data.tools_used))
        name, weight = max(candidates.items(), key=lambda kv: kv[1])
        if weight == 0:
            _squeeze(data, cap)
            break
        if name == "parameter_configurations":
            data.parameter_configurations.popitem()
        else:
            getattr(data, name).pop()
        data.truncated = True

    data.char_len = len(data.render())
    return data


def _squeeze(data: SubTaskSummary, cap: int) -> None:
    """Clip the free-text fields in turn, and clear them if even that overflows."""
    data.truncated = True

    def excess() -> int:
        return len(data.render()) - cap

    data.goal = clip_text(data.goal, max(0, len(data.goal) - excess()))
    if excess() > 0 and data.solution_text:
        limit = max(1, len(data.solution_text) - excess())
        data.solution_text = clip_text(data.solution_text, limit)
    if excess() > 0 and data.failure_modes:
        mode = data.failure_modes[0]
        data.failure_modes = [clip_text(mode, max(1, len(mode) - excess()))]
    if excess() > 0:
        data.goal, data.solution_text, data.failure_modes = "", None, []


# --------------------------------------------------------------------- #
# Planner context                                                       #
# --------------------------------------------------------------------- #
@dataclass(slots=True, frozen=True)
class PromptContext:
    text: str
    included: tuple[str, ...]
    elided: int

    @property
    def size(self) -> int:
        return len(self.text)


def build_planner_context(
    state: PlannerState,
    summaries: Sequence[SubTaskSummary],
    skills: Sequence[Skill] = (),
    cap: int = defaults.PLANNER_CONTEXT_CAP,
) -> PromptContext:
    """
    Assemble the planner prompt context within ``cap`` characters.

    Summaries are kept newest first; older ones that do not fit are
    replaced by a single elision marker stating how many were dropped.
    """
    head = [_intent_section(state), _outline_section(state)]
    if skills:
        excerpts = [
            f"- {clip_text(skill.excerpt(), defaults.SKILL_EXCERPT_CAP)}"
            for skill in skills
        ]
        head.append("## Experience from past runs\n" + "\n".join(excerpts))
    tail = _state_section(state)

    fixed = len("\n\n".join([*head, tail])) + 2 * len("\n\n")
    budget = cap - fixed - len("## Completed subtasks\n") - len(ELISION_MARKER) - 16
    kept: list[SubTaskSummary] = []
    for summary in reversed(summaries):
        block = len(summary.render()) + 1
        if block > budget:
            break
        kept.append(summary)
        budget -= block
    kept.reverse()
    elided = len(summaries) - len(kept)

    sections = list(head)
    if summaries:
        blocks = [ELISION_MARKER.format(count=elided)] if elided else []
        blocks += [s.render() for s in kept]
        sections.append("## Completed subtasks\n" + "\n".join(blocks))
    sections.append(tail)

    text = "\n\n".join(sections)
    if len(text) > cap:
        logger.warning("planner context clipped to %d characters", cap)
        text = clip_text(text, cap)
    included = tuple(s.subtask_id for s in kept)
    return PromptContext(text=text, included=included, elided=elided)


def _intent_section(state: PlannerState) -> str:
    intent = state.intent
    lines = [
        "## Research objective",
        f"query: {clip_text(state.query, defaults.SUMMARY_CAP)}",
        f"subject: {intent.research_subject}",
        f"task type: {intent.task_type.value}",
        f"domains: {', '.join(sorted(intent.domains))}",
    ]
    if intent.tool_cues:
        lines.append(f"tool cues: {'; '.join(intent.tool_cues)}")
    if intent.output_contract:
        lines.append(f"output format: {intent.output_contract}")
    return "\n".join(lines)


def _outline_section(state: PlannerState) -> str:
    lines = ["## Outline"]
    lines.extend(
        f"{i}. [{stage.stage_id}] {stage.goal} (done when: {stage.success_criterion})"
        for i, stage in enumerate(state.outline.stages, 1)
    )
    return "\n".join(lines)


def _state_section(state: PlannerState) -> str:
    pending = [
        f"- {spec.subtask_id} (stage {spec.parent_stage_id}, after "
        f"{', '.join(sorted(spec.depends_on)) or 'nothing'}): "
        f"{clip_text(spec.goal, defaults.SUMMARY_ITEM_CAP)}"
        for spec in state.pending
    ]
    budgets = state.budgets
    lines = [
        "## State",
        f"outer iterations: {state.outer_iterations}/{budgets.max_outer_iterations}",
        f"subtasks used: {state.subtask_count}/{budgets.max_subtasks}",
        "pending:" if pending else "pending: none",
        *pending,
    ]
    if state.failure_log:
        lines.append("recent failures:")
        recent = state.failure_log[-5:]
        lines.extend(f"- {clip_text(f, defaults.SUMMARY_ITEM_CAP)}" for f in recent)
    return "\n".join(lines)
