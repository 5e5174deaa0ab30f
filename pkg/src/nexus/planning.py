"""
Outer loop: intent recognition, the global outline and the planner.

The planner is a small state machine around :class:`PlannerState`. In
``dual`` mode the model decides every step through a JSON protocol (see
``docs/planner_protocol.md``); the two ablation modes decide
deterministically.
"""

from __future__ import annotations

import ast
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from nexus.constants import defaults
from nexus.constants.domains import DOMAINS, normalize_domain
from nexus.constants.enums import DecisionKind, LoopMode, SubTaskStatus, TaskType
from nexus.constants.keywords import (
    INNER_ONLY_STAGE_ID,
    INNER_ONLY_SUBTASK_ID,
    PURPOSE_INTENT,
    PURPOSE_OUTLINE,
    PURPOSE_PLANNER,
    RUNTIME_PRODUCER,
    UNKNOWN,
)
from nexus.constants.prompts import (
    INTENT_SYSTEM,
    OUTLINE_SYSTEM,
    OUTLINE_USER,
    PLANNER_SYSTEM,
    PLANNER_USER,
)
from nexus.constants.regexps import CONTRACT_KEY_RE, OUTPUT_FORMAT_RE
from nexus.context import build_planner_context
from nexus.errors import (
    BudgetExhausted,
    ModelProtocolError,
    PreconditionViolation,
    UnknownSubtask,
)
from nexus.model_backend import ChatParams, ChatRequest, complete_json
from nexus.toolhub import ToolManifest

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from nexus.context import SubTaskSummary
    from nexus.evolve import Skill
    from nexus.model_backend import ModelBackend

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------- #
# Intent and outline                                                    #
# --------------------------------------------------------------------- #
class StructuredIntent(BaseModel):
    model_config = ConfigDict(frozen=True)

    research_subject: str = Field(min_length=1)
    task_type: TaskType
    domains: list[str] = Field(min_length=1)
    tool_cues: list[str] = Field(default_factory=list)
    output_contract: str | None = None

    @field_validator("domains")
    @classmethod
    def _normalize_domains(cls, tags: list[str]) -> list[str]:
        domains = {d for tag in tags if (d := normalize_domain(tag)) is not None}
        if not domains:
            msg = f"no domain from the vocabulary {sorted(DOMAINS)} in {tags}"
            raise ValueError(msg)
        return sorted(domains)

    def broadened(self) -> StructuredIntent:
        """The same intent covering every domain of the vocabulary."""
        return self.model_copy(update={"domains": sorted(DOMAINS)})


class Stage(BaseModel):
    model_config = ConfigDict(frozen=True)

    stage_id: str = Field(min_length=1)
    goal: str = Field(min_length=1)
    success_criterion: str = ""


class OutlineReply(BaseModel):
    stages: list[Stage] = Field(min_length=1)

    @model_validator(mode="after")
    def _unique_ids(self) -> OutlineReply:
        ids = [s.stage_id for s in self.stages]
        if len(set(ids)) != len(ids):
            msg = f"stage ids must be unique: {ids}"
            raise ValueError(msg)
        return self


class TaskOutline(OutlineReply):
    model_config = ConfigDict(frozen=True)

    produced_by: str = ""

    def stage(self, stage_id: str) -> Stage | None:
        return next((s for s in self.stages if s.stage_id == stage_id), None)


def recognize_intent(
    query: str,
    model: ModelBackend,
    retries: int = defaults.PROTOCOL_RETRIES,
    params: ChatParams | None = None,
) -> StructuredIntent:
    """
    Parse the query into a structured research objective.

    An explicit ``Output format:`` clause of the query becomes the output
    contract verbatim, whatever the model replied.

    Raises:
        PreconditionViolation: On an empty query.
        ModelProtocolError: When no valid intent arrives within ``retries``.
    """
    if not query.strip():
        msg = "query must not be empty"
        raise PreconditionViolation(msg)

    system = INTENT_SYSTEM.format(
        task_types=[t.value for t in TaskType],
        domains=sorted(DOMAINS),
    )
    intent = complete_json(
        model,
        ChatRequest.of(system, query, PURPOSE_INTENT, params),
        StructuredIntent,
        retries,
    )
    clause = OUTPUT_FORMAT_RE.search(query)
    if clause:
        intent = intent.model_copy(update={"output_contract": clause.group(1).strip()})
    logger.info("intent: %s %s", intent.task_type.value, intent.domains)
    return intent


def draft_outline(
    intent: StructuredIntent,
    model: ModelBackend,
    retries: int = defaults.PROTOCOL_RETRIES,
    params: ChatParams | None = None,
) -> TaskOutline:
    """Ask the model for the global outline; zero stages are rejected."""
    params = params or ChatParams()
    reply = complete_json(
        model,
        ChatRequest.of(
            OUTLINE_SYSTEM,
            OUTLINE_USER.format(intent=intent.model_dump_json(indent=2)),
            PURPOSE_OUTLINE,
            params,
        ),
        OutlineReply,
        retries,
    )
    return TaskOutline(stages=reply.stages, produced_by=params.model_name)


def runtime_outline(intent: StructuredIntent, query: str) -> TaskOutline:
    """Single-stage outline used when global decomposition is disabled."""
    return TaskOutline(
        stages=[
            Stage(
                stage_id=INNER_ONLY_STAGE_ID,
                goal=query.strip() or intent.research_subject,
                success_criterion="the query is answered",
            ),
        ],
        produced_by=RUNTIME_PRODUCER,
    )


# --------------------------------------------------------------------- #
# Planner state                                                         #
# --------------------------------------------------------------------- #
class SubTaskSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    subtask_id: str = Field(min_length=1, max_length=defaults.SUBTASK_ID_MAX)
    goal: str = Field(min_length=1)
    parent_stage_id: str
    depends_on: list[str] = Field(default_factory=list)
    injected_tools: list[ToolManifest] = Field(default_factory=list)
    skill_hints: list[str] = Field(default_factory=list)

    @field_validator("depends_on")
    @classmethod
    def _as_set(cls, ids: list[str]) -> list[str]:
        return sorted(set(ids))


class PlannerDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: DecisionKind
    subtasks: list[SubTaskSpec] = Field(default_factory=list)
    reason: str | None = None
    answer: str | None = None
    forced: bool = False


@dataclass(slots=True)
class Budgets:
    max_outer_iterations: int = defaults.MAX_OUTER_ITERATIONS
    max_subtasks: int = defaults.MAX_SUBTASKS


@dataclass(slots=True)
class PlannerState:
    """
    Global task state. Exactly one control thread mutates it.

    ``pending`` holds specs not yet dispatched, ``dispatched`` those running;
    ``completed`` holds compressed summaries only.
    """

    query: str
    intent: StructuredIntent
    outline: TaskOutline
    loop_mode: LoopMode = LoopMode.DUAL
    budgets: Budgets = field(default_factory=Budgets)
    pending: list[SubTaskSpec] = field(default_factory=list)
    dispatched: dict[str, SubTaskSpec] = field(default_factory=dict)
    completed: list[SubTaskSummary] = field(default_factory=list)
    failure_log: list[str] = field(default_factory=list)
    outer_iterations: int = 0
    created: list[str] = field(default_factory=list)

    @property
    def completed_ids(self) -> set[str]:
        return {s.subtask_id for s in self.completed}

    @property
    def subtask_count(self) -> int:
        return len(self.created)

    def eligible(self) -> list[SubTaskSpec]:
        """Pending specs whose dependencies are all completed, by id."""
        done = self.completed_ids
        return sorted(
            (s for s in self.pending if set(s.depends_on) <= done),
            key=lambda s: s.subtask_id,
        )

    def add(self, specs: Sequence[SubTaskSpec]) -> None:
        self.pending.extend(specs)
        self.created.extend(s.subtask_id for s in specs)


# --------------------------------------------------------------------- #
# Decision protocol                                                     #
# --------------------------------------------------------------------- #
class SubTaskDraft(BaseModel):
    subtask_id: str = Field(min_length=1, max_length=defaults.SUBTASK_ID_MAX)
    goal: str = Field(min_length=1)
    parent_stage_id: str = Field(min_length=1)
    depends_on: list[str] = Field(default_factory=list)


class DecisionReply(BaseModel):
    kind: Literal["dispatch", "replan", "finish"]
    subtasks: list[SubTaskDraft] = Field(default_factory=list)
    reason: str = ""


def _protocol_check(state: PlannerState) -> Callable[[DecisionReply], None]:
    def check(reply: DecisionReply) -> None:
        if reply.kind == DecisionKind.FINISH.value:
            if state.pending or state.dispatched:
                pending = [s.subtask_id for s in state.pending]
                msg = f"cannot finish while subtasks are pending: {pending}"
                raise ValueError(msg)
            return
        if reply.kind == DecisionKind.REPLAN.value:
            return

        known = set(state.created)
        new_ids = [d.subtask_id for d in reply.subtasks]
        clash = sorted(known.intersection(new_ids)) or sorted(
            {i for i in new_ids if new_ids.count(i) > 1}
        )
        if clash:
            msg = f"subtask ids already used: {clash}"
            raise ValueError(msg)
        if state.subtask_count + len(new_ids) > state.budgets.max_subtasks:
            msg = f"at most {state.budgets.max_subtasks} subtasks per run"
            raise ValueError(msg)
        for draft in reply.subtasks:
            if state.outline.stage(draft.parent_stage_id) is None:
                msg = f"{draft.subtask_id}: unknown stage {draft.parent_stage_id!r}"
                raise ValueError(msg)
            unknown = set(draft.depends_on) - known - set(new_ids)
            if unknown:
                msg = f"{draft.subtask_id}: unknown dependencies {sorted(unknown)}"
                raise ValueError(msg)
        _check_acyclic({d.subtask_id: set(d.depends_on) for d in reply.subtasks})

        done = state.completed_ids
        eligible = [s for s in state.pending if set(s.depends_on) <= done]
        eligible += [d for d in reply.subtasks if set(d.depends_on) <= done]
        if not eligible:
            msg = "nothing is eligible for dispatch"
            raise ValueError(msg)

    return check


def _check_acyclic(graph: dict[str, set[str]]) -> None:
    remaining = {k: v & graph.keys() for k, v in graph.items()}
    while remaining:
        ready = [k for k, deps in remaining.items() if not deps]
        if not ready:
            msg = f"dependency cycle among {sorted(remaining)}"
            raise ValueError(msg)
        for k in ready:
            del remaining[k]
        for deps in remaining.values():
            deps.difference_update(ready)


def next_decision(  # noqa: PLR0913
    state: PlannerState,
    model: ModelBackend,
    *,
    skills: Sequence[Skill] = (),
    context_cap: int = defaults.PLANNER_CONTEXT_CAP,
    retries: int = defaults.PROTOCOL_RETRIES,
    params: ChatParams | None = None,
) -> PlannerDecision:
    """
    Take one outer-loop decision and apply it to ``state``.

    Every decision counts as one outer iteration. A dispatch moves the
    eligible specs from ``pending`` to ``dispatched``; a replan drops the
    pending specs; a finish carries the final answer draft.

    Raises:
        BudgetExhausted: When another decision would exceed the budget.
    """
    if state.outer_iterations >= state.budgets.max_outer_iterations:
        limit = state.budgets.max_outer_iterations
        msg = f"outer-loop budget of {limit} decisions used up"
        raise BudgetExhausted(msg)
    state.outer_iterations += 1

    if state.loop_mode is LoopMode.INNER_ONLY:
        decision = _inner_only(state)
    elif state.loop_mode is LoopMode.OUTER_ONLY:
        decision = _outer_only(state)
    else:
        decision = _model_decision(state, model, skills, context_cap, retries, params)

    if decision.kind is DecisionKind.DISPATCH:
        eligible = state.eligible()
        for spec in eligible:
            state.pending.remove(spec)
            state.dispatched[spec.subtask_id] = spec
        decision = decision.model_copy(update={"subtasks": eligible})
    elif decision.kind is DecisionKind.REPLAN:
        state.pending.clear()

    logger.info(
        "decision %d: %s %s",
        state.outer_iterations,
        decision.kind.value,
        [s.subtask_id for s in decision.subtasks] or decision.reason or "",
    )
    return decision


def _inner_only(state: PlannerState) -> PlannerDecision:
    if not state.created:
        state.add(
            [
                SubTaskSpec(
                    subtask_id=INNER_ONLY_SUBTASK_ID,
                    goal=state.query,
                    parent_stage_id=state.outline.stages[0].stage_id,
                ),
            ],
        )
        return PlannerDecision(kind=DecisionKind.DISPATCH)
    return finish(state)


def _outer_only(state: PlannerState) -> PlannerDecision:
    stages = state.outline.stages
    if len(state.created) < len(stages):
        index = len(state.created)
        stage = stages[index]
        goal = stage.goal
        if stage.success_criterion:
            goal += f" (done when: {stage.success_criterion})"
        state.add(
            [
                SubTaskSpec(
                    subtask_id=stage.stage_id,
                    goal=goal,
                    parent_stage_id=stage.stage_id,
                    depends_on=[stages[index - 1].stage_id] if index else [],
                ),
            ],
        )
        return PlannerDecision(kind=DecisionKind.DISPATCH)
    return finish(state)


def _model_decision(  # noqa: PLR0913
    state: PlannerState,
    model: ModelBackend,
    skills: Sequence[Skill],
    context_cap: int,
    retries: int,
    params: ChatParams | None,
) -> PlannerDecision:
    context = build_planner_context(state, state.completed, skills, context_cap)
    request = ChatRequest.of(
        PLANNER_SYSTEM,
        PLANNER_USER.format(context=context.text),
        PURPOSE_PLANNER,
        params,
    )
    check = _protocol_check(state)
    try:
        reply = complete_json(model, request, DecisionReply, retries, check)
    except ModelProtocolError as exc:
        logger.warning("planner protocol failure, forcing finish: %s", exc)
        return finish(state, forced=True, reason=f"planner protocol error: {exc}")

    if reply.kind == DecisionKind.FINISH.value:
        return finish(state)
    if reply.kind == DecisionKind.REPLAN.value:
        reason = reply.reason or "replan"
        return PlannerDecision(kind=DecisionKind.REPLAN, reason=reason)
    state.add([SubTaskSpec(**d.model_dump()) for d in reply.subtasks])
    return PlannerDecision(kind=DecisionKind.DISPATCH)


def finish(
    state: PlannerState,
    *,
    forced: bool = False,
    reason: str | None = None,
) -> PlannerDecision:
    return PlannerDecision(
        kind=DecisionKind.FINISH,
        answer=assemble_final_answer(state),
        forced=forced,
        reason=reason,
    )


def integrate_result(state: PlannerState, summary: SubTaskSummary) -> PlannerState:
    """
    Record a dispatched subtask's summary.

    Failure modes of unsolved subtasks go to ``failure_log`` so the next
    decision sees them.

    Raises:
        UnknownSubtask: When the id is not currently dispatched.
    """
    if summary.subtask_id not in state.dispatched:
        msg = f"subtask {summary.subtask_id!r} was not dispatched"
        raise UnknownSubtask(msg)
    del state.dispatched[summary.subtask_id]
    state.completed.append(summary)
    if summary.status is not SubTaskStatus.SOLVED:
        state.failure_log.extend(
            f"{summary.subtask_id}: {mode}" for mode in summary.failure_modes
        )
    logger.info("integrated %s (%s)", summary.subtask_id, summary.status.value)
    return state


# --------------------------------------------------------------------- #
# Final answer                                                          #
# --------------------------------------------------------------------- #
def contract_keys(contract: str | None) -> list[str]:
    if not contract:
        return []
    return list(dict.fromkeys(CONTRACT_KEY_RE.findall(contract)))


def assemble_final_answer(state: PlannerState) -> str:
    """
    Build the final answer draft from summaries and the output contract.

    Without readable contract keys the draft is the newest solved solution.
    With keys, it is a dict literal holding exactly those keys.
    """
    solved = [
        s
        for s in state.completed
        if s.status is SubTaskStatus.SOLVED and s.solution_text is not None
    ]
    draft = solved[-1].solution_text if solved else None
    keys = contract_keys(state.intent.output_contract)
    if not keys:
        return draft if draft is not None else UNKNOWN

    parsed = _literal(draft) if draft is not None else None
    given = parsed if isinstance(parsed, dict) else {}
    answer: dict[str, object] = {}
    for key in keys:
        if key in given:
            answer[key] = given[key]
            continue
        value: object = UNKNOWN
        for summary in reversed(state.completed):
            if key in summary.parameter_configurations:
                value = _literal(summary.parameter_configurations[key])
                break
        answer[key] = value
    return repr(answer)


def _literal(text: str) -> object:
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        return text.strip()
