"""
Execution records of the inner loop.

A subtask's raw trace is its list of :class:`Step`; the planner never sees
it, only the compressed summary built from it.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator

from nexus.constants.enums import ActionKind, SubTaskStatus
from nexus.object_store import ObjectRef
from nexus.sandbox import Observation
from nexus.utils import model_json


class Action(BaseModel):
    """The interior of one well-formed tag pair; ``span`` is in reply bytes."""

    model_config = ConfigDict(frozen=True)

    kind: ActionKind
    text: str
    span: tuple[int, int]


class Step(BaseModel):
    model_config = ConfigDict(frozen=True)

    step_index: int = Field(ge=0)
    model_reply: str
    actions: list[Action] = Field(default_factory=list)
    observations: list[Observation] = Field(default_factory=list)
    error_flag: bool = False
    error: str | None = None

    @property
    def code_actions(self) -> list[Action]:
        return [a for a in self.actions if a.kind is ActionKind.CODE]

    @property
    def solution(self) -> str | None:
        """Text of the last solution action of the step."""
        solutions = [a.text for a in self.actions if a.kind is ActionKind.SOLUTION]
        return solutions[-1] if solutions else None

    @property
    def refs(self) -> list[ObjectRef]:
        return [ref for obs in self.observations for ref in obs.refs]


class SubTaskResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    subtask_id: str
    status: SubTaskStatus
    solution_text: str | None = None
    steps: int = 0
    format_ok: bool = False
    failure: str | None = None

    @model_validator(mode="after")
    def _solved_has_solution(self) -> SubTaskResult:
        if self.status is SubTaskStatus.SOLVED and self.solution_text is None:
            msg = "a solved subtask needs solution_text"
            raise ValueError(msg)
        return self


class SubTaskTrace(BaseModel):
    """Raw trace of one subtask plus the context it ran with."""

    subtask_id: str
    goal: str = ""
    tool_ids: list[str] = Field(default_factory=list)
    steps: list[Step] = Field(default_factory=list)
    trace_ref: ObjectRef | None = None

    def to_jsonl(self) -> bytes:
        return "".join(model_json(step) + "\n" for step in self.steps).encode()

    @property
    def error_steps(self) -> int:
        return sum(step.error_flag for step in self.steps)


def compute_format_ok(steps: list[Step]) -> bool:
    """
    True iff some code action was executed via tags and the final answer
    arrived inside solution tags.
    """
    executed = any(step.observations for step in steps)
    answered = any(step.solution is not None for step in steps)
    return executed and answered
