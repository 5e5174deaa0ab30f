"""
Run trajectories.

A trajectory is a JSONL file with one record per event, written and flushed
as the run goes, so even a crashed run leaves a loadable file. Records carry
no wall-clock data: two runs over the same fixtures are byte-identical.

Record kinds, in order of appearance::

    run, intent, skills, outline, decision, subtask_start, step,
    subtask_end, summary, critic, skill, final
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from nexus.codeact import render_observations
from nexus.constants import defaults
from nexus.constants.enums import DecisionKind, RunStatus, SubTaskStatus
from nexus.context import SubTaskSummary
from nexus.errors import TrajectoryNotFound
from nexus.evolve import CriticReport, Skill
from nexus.object_store import ObjectRef
from nexus.planning import StructuredIntent, TaskOutline
from nexus.rlmath import RewardBreakdown, SftCandidate
from nexus.trace import Step, SubTaskResult
from nexus.utils import canonical_json, clip_text, sha256_hex

if TYPE_CHECKING:
    from types import TracebackType

logger = logging.getLogger(__name__)

TRAJECTORIES_DIR = "trajectories"


def compute_run_id(
    query: str,
    config_digest: str,
    loop_mode: str,
    rollout: int = 0,
) -> str:
    """Deterministic per rollout, so repeated rollouts of a query never collide."""
    return sha256_hex(canonical_json([query, config_digest, loop_mode, rollout]))[:16]


def task_id_of(query: str) -> str:
    return sha256_hex(query)[:16]


def trajectory_path(store_dir: Path, run_id: str) -> Path:
    return Path(store_dir) / TRAJECTORIES_DIR / f"{run_id}.jsonl"


def find_trajectory(store_dir: Path, ref: str) -> Path:
    """Resolve a run id or a file path to an existing trajectory file."""
    candidates = [Path(ref), trajectory_path(store_dir, ref)]
    for path in candidates:
        if path.is_file():
            return path
    msg = f"no trajectory {ref!r} in {Path(store_dir) / TRAJECTORIES_DIR}"
    raise TrajectoryNotFound(msg)


# --------------------------------------------------------------------- #
# Records                                                               #
# --------------------------------------------------------------------- #
class DecisionRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    iteration: int
    kind: DecisionKind
    subtask_ids: list[str] = Field(default_factory=list)
    reason: str | None = None
    answer: str | None = None
    forced: bool = False


class SubTaskStart(BaseModel):
    model_config = ConfigDict(frozen=True)

    subtask_id: str
    goal: str
    parent_stage_id: str
    depends_on: list[str] = Field(default_factory=list)
    tool_ids: list[str] = Field(default_factory=list)
    skill_hints: list[str] = Field(default_factory=list)
    max_steps: int


class FinalRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    status: RunStatus
    answer: str | None = None
    exit_code: int
    expected: str | None = None
    reward: RewardBreakdown | None = None
    error: dict[str, str] | None = None


@dataclass(slots=True)
class SubTaskRecord:
    start: SubTaskStart
    steps: list[Step] = field(default_factory=list)
    result: SubTaskResult | None = None
    trace_ref: ObjectRef | None = None


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


# --------------------------------------------------------------------- #
# Aggregate                                                             #
# --------------------------------------------------------------------- #
@dataclass(slots=True)
class Trajectory:
    """In-memory view of a trajectory file, rebuilt record by record."""

    run_id: str = ""
    query: str = ""
    loop_mode: str = ""
    config_digest: str = ""
    rollout: int = 0
    intent: StructuredIntent | None = None
    outline: TaskOutline | None = None
    skill_ids: list[str] = field(default_factory=list)
    decisions: list[DecisionRecord] = field(default_factory=list)
    subtasks: dict[str, SubTaskRecord] = field(default_factory=dict)
    summaries: list[SubTaskSummary] = field(default_factory=list)
    critic: CriticReport | None = None
    skill: Skill | None = None
    final: FinalRecord | None = None
    records: list[dict[str, Any]] = field(default_factory=list)

    @classmethod
    def load(cls, path: Path) -> Trajectory:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            msg = f"no trajectory file {path}"
            raise TrajectoryNotFound(msg) from None
        trajectory = cls()
        for line in lines:
            if line.strip():
                trajectory.apply(json.loads(line))
        return trajectory

    def apply(self, record: dict[str, Any]) -> None:  # noqa: C901
        self.records.append(record)
        kind = record["kind"]
        if kind == "run":
            self.run_id = record["run_id"]
            self.query = record["query"]
            self.loop_mode = record["loop_mode"]
            self.config_digest = record["config_digest"]
            self.rollout = record.get("rollout", 0)
        elif kind == "intent":
            self.intent = StructuredIntent.model_validate(record["intent"])
        elif kind == "skills":
            self.skill_ids = list(record["skill_ids"])
        elif kind == "outline":
            self.outline = TaskOutline.model_validate(record["outline"])
        elif kind == "decision":
            self.decisions.append(DecisionRecord.model_validate(record["decision"]))
        elif kind == "subtask_start":
            start = SubTaskStart.model_validate(record["subtask"])
            self.subtasks[start.subtask_id] = SubTaskRecord(start=start)
        elif kind == "step":
            step = Step.model_validate(record["step"])
            self.subtasks[record["subtask_id"]].steps.append(step)
        elif kind == "subtask_end":
            result = SubTaskResult.model_validate(record["result"])
            sub = self.subtasks[result.subtask_id]
            sub.result = result
            ref = record.get("trace_ref")
            sub.trace_ref = ObjectRef.model_validate(ref) if ref else None
        elif kind == "summary":
            self.summaries.append(SubTaskSummary.model_validate(record["summary"]))
        elif kind == "critic":
            self.critic = CriticReport.model_validate(record["report"])
        elif kind == "skill":
            self.skill = Skill.model_validate(record["skill"])
        elif kind == "final":
            self.final = FinalRecord.model_validate(record["final"])
        else:
            logger.warning("ignoring unknown trajectory record %r", kind)

    def to_jsonl(self) -> bytes:
        return "".join(canonical_json(r) + "\n" for r in self.records).encode()

    # ----------------------------------------------------------------- #
    # Derived views                                                     #
    # ----------------------------------------------------------------- #
    @property
    def task_id(self) -> str:
        return task_id_of(self.query)

    @property
    def steps(self) -> list[Step]:
        return [step for sub in self.subtasks.values() for step in sub.steps]

    @property
    def total_steps(self) -> int:
        return len(self.steps)

    @property
    def error_steps(self) -> int:
        return sum(step.error_flag for step in self.steps)

    @property
    def step_budget(self) -> int:
        return sum(sub.start.max_steps for sub in self.subtasks.values())

    @property
    def finish_decision(self) -> DecisionRecord | None:
        finishes = [d for d in self.decisions if d.kind is DecisionKind.FINISH]
        return finishes[-1] if finishes else None

    @property
    def finished_planning(self) -> bool:
        return self.finish_decision is not None or self.final is not None

    @property
    def finished(self) -> bool:
        return self.final is not None

    @property
    def final_answer(self) -> str | None:
        if self.final is not None:
            return self.final.answer
        finish = self.finish_decision
        return finish.answer if finish else None

    @property
    def status_text(self) -> str:
        if self.final is not None:
            return self.final.status.value
        finish = self.finish_decision
        if finish is None:
            return "running"
        return (RunStatus.FORCED_FINISH if finish.forced else RunStatus.FINISHED).value

    @property
    def reward(self) -> RewardBreakdown | None:
        return self.final.reward if self.final else None

    def answer_result(self) -> SubTaskResult:
        """
        Run-level result for rewards: solved when a solved subtask produced
        the answer, with that subtask's format flag.
        """
        solved = [
            sub.result
            for sub in self.subtasks.values()
            if sub.result is not None and sub.result.status is SubTaskStatus.SOLVED
        ]
        last = solved[-1] if solved else None
        return SubTaskResult(
            subtask_id=self.run_id or "run",
            status=SubTaskStatus.SOLVED if last else SubTaskStatus.FAILED,
            solution_text=self.final_answer if last else None,
            steps=self.total_steps,
            format_ok=last.format_ok if last else False,
        )

    def sft_candidate(self) -> SftCandidate:
        """This run as one rollout of its task; unrewarded runs count as 0."""
        reward = self.reward.total if self.reward is not None else 0.0
        return SftCandidate(
            task_id=self.task_id,
            query=self.query,
            text=self.reply_text(),
            reward=reward,
        )

    def steps_frame(self) -> pd.DataFrame:
        """One row per step across subtasks."""
        rows = [
            {
                "subtask_id": sub_id,
                "step_index": step.step_index,
                "error_flag": step.error_flag,
                "code_actions": len(step.code_actions),
                "observations": len(step.observations),
                "timed_out": any(o.timed_out for o in step.observations),
                "has_solution": step.solution is not None,
                "reply_chars": len(step.model_reply),
            }
            for sub_id, sub in self.subtasks.items()
            for step in sub.steps
        ]
        columns = [
            "subtask_id",
            "step_index",
            "error_flag",
            "code_actions",
            "observations",
            "timed_out",
            "has_solution",
            "reply_chars",
        ]
        return pd.DataFrame(rows, columns=columns)

    def reply_text(self, inline_cap: int = defaults.INLINE_CAP) -> str:
        """Interleaved model replies and observation previews, tags included."""
        parts = []
        for sub in self.subtasks.values():
            for step in sub.steps:
                parts.append(step.model_reply)
                if step.observations:
                    parts.append(render_observations(step.observations, inline_cap))
        return "\n".join(parts)

    def render(self, cap: int = defaults.PLANNER_CONTEXT_CAP) -> str:
        """Compact text of the whole run for critic and distillation prompts."""
        lines = [f"Query: {self.query}"]
        if self.intent is not None:
            lines.append(f"Intent: {self.intent.model_dump_json()}")
        if self.outline is not None:
            lines.append("Outline:")
            lines.extend(f"- [{s.stage_id}] {s.goal}" for s in self.outline.stages)
        lines.append("Decisions:")
        for d in self.decisions:
            ids = " ".join(d.subtask_ids)
            reason = d.reason or ""
            lines.append(f"- {d.iteration}: {d.kind.value} {ids} {reason}".rstrip())
        lines.append("Subtask summaries:")
        lines.extend(s.render() for s in self.summaries)
        lines.append(f"Steps: {self.total_steps} ({self.error_steps} with errors)")
        lines.append(f"Final answer ({self.status_text}): {self.final_answer}")
        return clip_text("\n".join(lines), cap)


# --------------------------------------------------------------------- #
# Writer                                                                #
# --------------------------------------------------------------------- #
class TrajectoryWriter:
    """Appends records to a trajectory file, flushing every line."""

    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")
        self._lock = threading.Lock()
        self.trajectory = Trajectory()

    def write(self, kind: str, **fields: Any) -> None:
        record = {"kind": kind, **_jsonable(fields)}
        with self._lock:
            self._fh.write(canonical_json(record) + "\n")
            self._fh.flush()
            self.trajectory.apply(record)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> TrajectoryWriter:
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.close()
