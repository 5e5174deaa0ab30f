"""
Trajectory evaluation and self-evolution.

A critic scores finished trajectories on four dimensions; trajectories
scoring at least the distillation threshold become skills: (trajectory,
experience, outcome) triples kept in an append-only JSONL repository and
injected into future planner contexts.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import TYPE_CHECKING, Annotated

from pydantic import BaseModel, ConfigDict, Field, model_validator

from nexus.constants import defaults
from nexus.constants.enums import ScoredBy, TaskType
from nexus.constants.keywords import PURPOSE_CRITIC, PURPOSE_DISTILL
from nexus.constants.prompts import CRITIC_SYSTEM, DISTILL_SYSTEM
from nexus.errors import ModelError, PreconditionViolation
from nexus.model_backend import ChatRequest, complete_json
from nexus.object_store import ObjectRef
from nexus.utils import clamp, model_json

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from nexus.model_backend import ModelBackend
    from nexus.object_store import ObjectStore
    from nexus.planning import StructuredIntent
    from nexus.sandbox import Observation
    from nexus.trajectory import Trajectory

logger = logging.getLogger(__name__)

UnitFloat = Annotated[float, Field(ge=0.0, le=1.0)]


class CriticScores(BaseModel):
    model_config = ConfigDict(frozen=True)

    scientific_soundness: UnitFloat
    reasoning_consistency: UnitFloat
    tool_usage_efficiency: UnitFloat
    reproducibility: UnitFloat

    def mean(self) -> float:
        return (
            self.scientific_soundness
            + self.reasoning_consistency
            + self.tool_usage_efficiency
            + self.reproducibility
        ) / 4


class CriticReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    run_id: str
    scores: CriticScores
    composite: UnitFloat
    rationale: str = ""
    scored_by: ScoredBy

    @model_validator(mode="after")
    def _composite_is_mean(self) -> CriticReport:
        if self.composite != self.scores.mean():
            msg = "composite must equal the mean of the four scores"
            raise ValueError(msg)
        return self

    @classmethod
    def of(
        cls,
        run_id: str,
        scores: CriticScores,
        rationale: str,
        scored_by: ScoredBy,
    ) -> CriticReport:
        return cls(
            run_id=run_id,
            scores=scores,
            composite=scores.mean(),
            rationale=rationale,
            scored_by=scored_by,
        )


class CriticReply(BaseModel):
    scientific_soundness: UnitFloat
    reasoning_consistency: UnitFloat
    rationale: str = ""


class DistillReply(BaseModel):
    experience: str = Field(min_length=1)


class SkillTriple(BaseModel):
    model_config = ConfigDict(frozen=True)

    trajectory_ref: ObjectRef
    experience: str = Field(min_length=1)
    outcome: str = Field(min_length=1)


class Skill(BaseModel):
    model_config = ConfigDict(frozen=True)

    skill_id: str
    triple: SkillTriple
    domain_tags: list[str] = Field(min_length=1)
    task_type: TaskType
    source_composite: UnitFloat

    def excerpt(self) -> str:
        return f"{self.triple.experience} (outcome: {self.triple.outcome})"


# --------------------------------------------------------------------- #
# Critic                                                                #
# --------------------------------------------------------------------- #
def efficiency_proxy(trajectory: Trajectory) -> float:
    """clamp(1 - error steps / steps) x clamp(unused step-budget fraction + 0.5)."""
    total = trajectory.total_steps
    errors = trajectory.error_steps
    budget = trajectory.step_budget
    error_part = clamp(1 - errors / total) if total else 1.0
    unused = 1 - total / budget if budget else 1.0
    return error_part * clamp(unused + 0.5)


def reproducibility_proxy(trajectory: Trajectory, store: ObjectStore | None) -> float:
    """Fraction of steps with no timeout whose observation objects still resolve."""
    steps = trajectory.steps
    if not steps:
        return 1.0

    def resolves(obs: Observation) -> bool:
        return store is None or all(store.exists(r) for r in obs.refs)

    replayable = sum(
        all(not obs.timed_out and resolves(obs) for obs in step.observations)
        for step in steps
    )
    return replayable / len(steps)


def score_trajectory(
    trajectory: Trajectory,
    model: ModelBackend | None = None,
    store: ObjectStore | None = None,
    retries: int = defaults.PROTOCOL_RETRIES,
) -> CriticReport:
    """
    Score a finished trajectory.

    Efficiency and reproducibility are always the deterministic proxies;
    soundness and consistency come from the critic model when one answers
    validly, otherwise they are the mean of the two proxies.
    """
    if not trajectory.finished_planning:
        msg = f"trajectory {trajectory.run_id} has not finished"
        raise PreconditionViolation(msg)

    efficiency = efficiency_proxy(trajectory)
    reproducibility = reproducibility_proxy(trajectory, store)
    fallback = (efficiency + reproducibility) / 2
    note = "no critic model configured"

    if model is not None:
        try:
            reply = complete_json(
                model,
                ChatRequest.of(CRITIC_SYSTEM, trajectory.render(), PURPOSE_CRITIC),
                CriticReply,
                retries,
            )
        except ModelError as exc:
            logger.warning("critic fell back to the deterministic proxy: %s", exc)
            note = f"critic reply unusable ({exc})"
        else:
            scores = CriticScores(
                scientific_soundness=reply.scientific_soundness,
                reasoning_consistency=reply.reasoning_consistency,
                tool_usage_efficiency=efficiency,
                reproducibility=reproducibility,
            )
            return CriticReport.of(
                trajectory.run_id,
                scores,
                reply.rationale,
                ScoredBy.MODEL,
            )

    scores = CriticScores(
        scientific_soundness=fallback,
        reasoning_consistency=fallback,
        tool_usage_efficiency=efficiency,
        reproducibility=reproducibility,
    )
    rationale = (
        f"{note}; deterministic proxy: soundness and consistency set to the proxy mean"
    )
    return CriticReport.of(
        trajectory.run_id,
        scores,
        rationale,
        ScoredBy.DETERMINISTIC_PROXY,
    )


# --------------------------------------------------------------------- #
# Distillation                                                          #
# --------------------------------------------------------------------- #
def distill_skill(  # noqa: PLR0913
    trajectory: Trajectory,
    report: CriticReport,
    store: ObjectStore,
    model: ModelBackend | None = None,
    threshold: float = defaults.DISTILL_THRESHOLD,
    retries: int = defaults.PROTOCOL_RETRIES,
) -> Skill | None:
    """
    Turn a high-scoring trajectory into a skill, or return ``None``.

    The skill id derives from the stored trajectory bytes, so distilling the
    same trajectory twice yields the same skill.
    """
    if report.run_id != trajectory.run_id:
        msg = f"report of {report.run_id} does not belong to {trajectory.run_id}"
        raise PreconditionViolation(msg)
    if report.composite < threshold or trajectory.intent is None:
        return None

    trajectory_ref = store.put_object(trajectory.to_jsonl(), "application/x-ndjson")
    experience = templated_experience(trajectory)
    if model is not None:
        try:
            experience = complete_json(
                model,
                ChatRequest.of(DISTILL_SYSTEM, trajectory.render(), PURPOSE_DISTILL),
                DistillReply,
                retries,
            ).experience
        except ModelError as exc:
            logger.warning("distillation fell back to the template: %s", exc)

    skill = Skill(
        skill_id=f"skill-{trajectory_ref.digest[:16]}",
        triple=SkillTriple(
            trajectory_ref=trajectory_ref,
            experience=experience,
            outcome=f"{trajectory.status_text}: {trajectory.final_answer}",
        ),
        domain_tags=trajectory.intent.domains,
        task_type=trajectory.intent.task_type,
        source_composite=report.composite,
    )
    logger.info("distilled %s from %s", skill.skill_id, trajectory.run_id)
    return skill


def templated_experience(trajectory: Trajectory) -> str:
    parts = [
        f"{s.subtask_id} [{s.status.value}]: {s.goal}"
        + (f" -> {s.solution_text}" if s.solution_text is not None else "")
        + (f" (tools: {', '.join(s.tools_used)})" if s.tools_used else "")
        + (f" (pitfalls: {'; '.join(s.failure_modes)})" if s.failure_modes else "")
        for s in trajectory.summaries
    ]
    return "Plan: " + " | ".join(parts) if parts else "Plan: single direct attempt"


# --------------------------------------------------------------------- #
# Repository                                                            #
# --------------------------------------------------------------------- #
class SkillRepository:
    """Append-only JSONL file of skills, one canonical record per line."""

    def __init__(
        self,
        path: Path,
        threshold: float = defaults.DISTILL_THRESHOLD,
    ) -> None:
        self.path = Path(path)
        self.threshold = threshold
        self._lock = threading.Lock()
        self._skills: dict[str, Skill] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    skill = Skill.model_validate_json(line)
                    self._skills[skill.skill_id] = skill

    def __len__(self) -> int:
        return len(self._skills)

    def __contains__(self, skill_id: object) -> bool:
        return skill_id in self._skills

    def skills(self) -> list[Skill]:
        return list(self._skills.values())

    def add(self, skill: Skill) -> bool:
        """Persist ``skill``; returns False when its id is already stored."""
        if skill.source_composite < self.threshold:
            msg = f"{skill.skill_id} scored {skill.source_composite} < {self.threshold}"
            raise PreconditionViolation(msg)
        with self._lock:
            if skill.skill_id in self._skills:
                return False
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(model_json(skill) + "\n")
            self._skills[skill.skill_id] = skill
        return True

    def save(self, path: Path | None = None) -> None:
        target = Path(path or self.path)
        text = "".join(model_json(s) + "\n" for s in self._skills.values())
        target.write_text(text, encoding="utf-8")

    def query(
        self,
        intent: StructuredIntent,
        k: int = defaults.SKILLS_IN_CONTEXT,
    ) -> list[Skill]:
        return query_skills(self._skills.values(), intent, k)


def query_skills(
    skills: Iterable[Skill],
    intent: StructuredIntent,
    k: int,
) -> list[Skill]:
    """Skills sharing a domain with the intent, by overlap, composite, then id."""
    return rank_skills(skills, intent.domains, k)


def rank_skills(skills: Iterable[Skill], domains: Sequence[str], k: int) -> list[Skill]:
    wanted = set(domains)
    scored = [(len(wanted.intersection(s.domain_tags)), s) for s in skills]
    ranked = sorted(
        ((overlap, s) for overlap, s in scored if overlap),
        key=lambda pair: (-pair[0], -pair[1].source_composite, pair[1].skill_id),
    )
    return [s for _, s in ranked[: max(k, 0)]]
