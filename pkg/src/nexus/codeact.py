"""
Inner loop: reason, run code, observe, until a solution or a budget.

Model replies use two tags: ``<code>...</code>`` runs in the sandbox and
``<solution>...</solution>`` ends the subtask. Observations reach the next
prompt as object references plus short previews only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

from nexus.constants import defaults
from nexus.constants.enums import ActionKind, SubTaskStatus
from nexus.constants.keywords import PURPOSE_CODEACT
from nexus.constants.prompts import (
    CODEACT_NO_ACTION,
    CODEACT_NO_CODE,
    CODEACT_REPROMPT,
    CODEACT_SYSTEM,
    CODEACT_USER,
)
from nexus.constants.regexps import ACTION_TAG_RE
from nexus.context import compress_trace
from nexus.errors import MalformedAction, PreconditionViolation, SandboxUnavailable
from nexus.model_backend import ChatMessage, ChatParams, ChatRequest
from nexus.object_store import ObjectOrigin
from nexus.trace import Action, Step, SubTaskResult, SubTaskTrace, compute_format_ok
from nexus.utils import clip_bytes

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from nexus.context import SubTaskSummary
    from nexus.model_backend import ModelBackend
    from nexus.object_store import ObjectStore
    from nexus.planning import SubTaskSpec
    from nexus.sandbox import Observation, Sandbox
    from nexus.toolhub import ToolContextBlock

logger = logging.getLogger(__name__)

NO_TOOLS = "No tools are injected for this subtask; use the standard library."


@dataclass(slots=True, frozen=True)
class InnerBudgets:
    max_steps: int = defaults.MAX_STEPS
    max_consecutive_errors: int = defaults.MAX_CONSECUTIVE_ERRORS

    def __post_init__(self) -> None:
        if self.max_steps < 1 or self.max_consecutive_errors < 1:
            msg = "inner-loop budgets must be at least 1"
            raise PreconditionViolation(msg)


def parse_actions(model_reply: str) -> list[Action]:
    """
    Return the well-formed action tag pairs of a reply in document order.

    Text outside tags is reasoning and ignored; spans are byte offsets of
    the whole tag pair.

    Raises:
        MalformedAction: When an opening tag is never closed.
    """
    actions = []
    pos = 0
    while match := ACTION_TAG_RE.search(model_reply, pos):
        tag = match.group(1)
        closing = f"</{tag}>"
        end = model_reply.find(closing, match.end())
        if end < 0:
            msg = f"<{tag}> opened at character {match.start()} is never closed"
            raise MalformedAction(msg)
        pos = end + len(closing)
        start = len(model_reply[: match.start()].encode())
        actions.append(
            Action(
                kind=ActionKind(tag),
                text=model_reply[match.end() : end],
                span=(start, len(model_reply[:pos].encode())),
            ),
        )
    return actions


def render_observations(observations: Sequence[Observation], inline_cap: int) -> str:
    """Observation feedback: refs plus previews of at most ``inline_cap`` bytes."""
    blocks = []
    for obs in observations:
        flag = " truncated" if obs.truncated else ""
        lines = [f"<observation exit={obs.exit_status}{flag}>"]
        for name, ref, preview in (
            ("stdout", obs.stdout_ref, obs.stdout_preview),
            ("stderr", obs.stderr_ref, obs.stderr_preview),
        ):
            if ref.size_bytes == 0:
                continue
            shown = clip_bytes(preview.encode(), inline_cap)
            lines.append(f"{name} [{ref.url}, {ref.size_bytes} bytes]:")
            lines.append(shown.rstrip("\n"))
            if len(shown.encode()) < ref.size_bytes:
                lines.append(f"[... preview only; read {ref.url} for the rest]")
        lines.extend(
            f"artifact [{ref.url}, {ref.size_bytes} bytes, {ref.media_type}]"
            for ref in obs.artifact_refs
        )
        if obs.quota_exceeded:
            lines.append("warning: the workspace exceeds its disk quota")
        lines.append("</observation>")
        blocks.append("\n".join(lines))
    return "\n".join(blocks)


def build_codeact_prompt(
    spec: SubTaskSpec,
    tools: ToolContextBlock,
    dependencies: Sequence[SubTaskSummary] = (),
) -> tuple[str, str]:
    """Return the (system, user) prompt of a subtask's first turn."""
    deps = ""
    if dependencies:
        deps = "\nResults of the subtasks this one depends on:\n" + "\n".join(
            d.render() for d in dependencies
        )
    skills = ""
    if spec.skill_hints:
        hints = "\n".join(f"- {h}" for h in spec.skill_hints)
        skills = "\nHints from past runs:\n" + hints
    system = CODEACT_SYSTEM.format(tools=tools.text or NO_TOOLS)
    user = CODEACT_USER.format(
        subtask_id=spec.subtask_id,
        stage_id=spec.parent_stage_id,
        goal=spec.goal,
        dependencies=deps,
        skills=skills,
    )
    return system, user


def run_subtask(  # noqa: PLR0913
    spec: SubTaskSpec,
    tools: ToolContextBlock,
    model: ModelBackend,
    sandbox: Sandbox,
    store: ObjectStore,
    budgets: InnerBudgets | None = None,
    *,
    dependencies: Sequence[SubTaskSummary] = (),
    inline_cap: int = defaults.INLINE_CAP,
    params: ChatParams | None = None,
    on_step: Callable[[Step], None] | None = None,
) -> tuple[SubTaskResult, SubTaskTrace]:
    """
    Run one subtask to a solution, a failure or its step budget.

    The workspace named by ``spec.subtask_id`` must exist. The raw trace is
    stored as a JSONL object and referenced from the returned trace.
    ``on_step`` sees every step as soon as it is taken.
    """
    budgets = budgets or InnerBudgets()
    system, user = build_codeact_prompt(spec, tools, dependencies)
    messages = [
        ChatMessage(role="system", content=system),
        ChatMessage(role="user", content=user),
    ]
    params = params or ChatParams()
    trace = SubTaskTrace(
        subtask_id=spec.subtask_id,
        goal=spec.goal,
        tool_ids=list(tools.tool_ids),
    )
    purpose = f"{PURPOSE_CODEACT}/{spec.subtask_id}"
    status = SubTaskStatus.BUDGET_EXHAUSTED
    solution: str | None = None
    failure: str | None = None
    consecutive_errors = 0

    for index in range(budgets.max_steps):
        request = ChatRequest(messages=messages, params=params, purpose=purpose)
        reply = model.complete(request).content
        step, feedback = _take_step(index, reply, spec.subtask_id, sandbox, inline_cap)
        trace.steps.append(step)
        if on_step is not None:
            on_step(step)

        if step.error and step.error.startswith(SandboxUnavailable.__name__):
            status, failure = SubTaskStatus.FAILED, step.error
            break
        if step.solution is not None:
            status, solution = SubTaskStatus.SOLVED, step.solution
            break

        consecutive_errors = consecutive_errors + 1 if step.error_flag else 0
        if consecutive_errors >= budgets.max_consecutive_errors:
            status = SubTaskStatus.FAILED
            failure = f"{consecutive_errors} consecutive failing steps"
            break
        messages += [
            ChatMessage(role="assistant", content=reply),
            ChatMessage(role="user", content=feedback),
        ]

    trace.trace_ref = store.put_object(
        trace.to_jsonl(),
        "application/x-ndjson",
        ObjectOrigin(subtask_id=spec.subtask_id, step_index=len(trace.steps)),
    )
    result = SubTaskResult(
        subtask_id=spec.subtask_id,
        status=status,
        solution_text=solution,
        steps=len(trace.steps),
        format_ok=compute_format_ok(trace.steps),
        failure=failure,
    )
    logger.info(
        "subtask %s: %s after %d steps",
        spec.subtask_id,
        status.value,
        result.steps,
    )
    return result, trace


def _take_step(
    index: int,
    reply: str,
    subtask_id: str,
    sandbox: Sandbox,
    inline_cap: int,
) -> tuple[Step, str]:
    try:
        actions = parse_actions(reply)
    except MalformedAction as exc:
        return _error_step(index, reply, f"{MalformedAction.__name__}: {exc}")
    if not actions:
        return _error_step(index, reply, CODEACT_NO_ACTION)

    observations: list[Observation] = []
    origin = ObjectOrigin(subtask_id=subtask_id, step_index=index)
    for action in actions:
        if action.kind is not ActionKind.CODE:
            continue
        try:
            observations.append(sandbox.execute(action.text, subtask_id, origin=origin))
        except SandboxUnavailable as exc:
            step = Step(
                step_index=index,
                model_reply=reply,
                actions=actions,
                observations=observations,
                error_flag=True,
                error=f"{SandboxUnavailable.__name__}: {exc}",
            )
            return step, ""

    step = Step(
        step_index=index,
        model_reply=reply,
        actions=actions,
        observations=observations,
        error_flag=any(not obs.ok for obs in observations),
    )
    feedback = render_observations(observations, inline_cap)
    if not observations:
        feedback = CODEACT_NO_CODE
    return step, feedback


def _error_step(index: int, reply: str, error: str) -> tuple[Step, str]:
    step = Step(step_index=index, model_reply=reply, error_flag=True, error=error)
    return step, CODEACT_REPROMPT.format(error=error)


def summarize_result(
    result: SubTaskResult,
    trace: SubTaskTrace,
    cap: int = defaults.SUMMARY_CAP,
    model: ModelBackend | None = None,
) -> SubTaskSummary:
    """Compressed summary of a finished subtask, as handed to the planner."""
    return compress_trace(trace, result, cap, model, trace_ref=trace.trace_ref)
