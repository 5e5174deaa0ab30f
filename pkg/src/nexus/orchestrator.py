"""
End-to-end task runs.

:class:`TaskRunner` wires the modules together: intent, outline, the
planner's decision loop, tool retrieval and the inner loop per subtask,
summaries back to the planner, then critic scoring and skill distillation.
Every event goes to the run's trajectory file as it happens.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

from nexus.codeact import run_subtask, summarize_result
from nexus.constants.enums import BackendKind, DecisionKind, LoopMode, RunStatus
from nexus.constants.keywords import ENV_TOOLS_DIR
from nexus.errors import (
    BudgetExhausted,
    NexusError,
    NoCandidates,
    PreconditionViolation,
)
from nexus.evolve import SkillRepository, distill_skill, score_trajectory
from nexus.model_backend import LiveBackend, ReplayBackend, ScriptedBackend
from nexus.object_store import ObjectStore
from nexus.planning import (
    PlannerState,
    draft_outline,
    finish,
    integrate_result,
    next_decision,
    recognize_intent,
    runtime_outline,
)
from nexus.rlmath import NumericGrader, compute_reward
from nexus.sandbox import Sandbox
from nexus.toolhub import ToolContextBlock, ToolRegistry, render_context
from nexus.trajectory import (
    DecisionRecord,
    FinalRecord,
    SubTaskStart,
    TrajectoryWriter,
    compute_run_id,
    trajectory_path,
)

if TYPE_CHECKING:
    from pathlib import Path

    from nexus.evolve import Skill
    from nexus.model_backend import ModelBackend
    from nexus.planning import PlannerDecision, StructuredIntent, SubTaskSpec
    from nexus.rlmath import RewardBreakdown
    from nexus.run_config import RunConfig
    from nexus.trace import Step, SubTaskResult, SubTaskTrace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FORCED_FINISH = 3


@dataclass(slots=True, frozen=True)
class RunOutcome:
    run_id: str
    status: RunStatus
    exit_code: int
    trajectory_path: Path
    answer: str | None = None
    reward: RewardBreakdown | None = None
    skill_id: str | None = None
    error: dict[str, str] | None = None


def make_backend(config: RunConfig) -> ModelBackend:
    backend = config.backend
    if backend.kind is BackendKind.REPLAY and backend.fixture is not None:
        return ReplayBackend(backend.fixture)
    if backend.kind is BackendKind.SCRIPTED and backend.script is not None:
        return ScriptedBackend.from_file(backend.script)
    return LiveBackend.from_env(model_name=backend.model_name)


class TaskRunner:
    """Runs queries under one config; collaborators can be injected for tests."""

    def __init__(  # noqa: PLR0913
        self,
        config: RunConfig,
        model: ModelBackend | None = None,
        *,
        registry: ToolRegistry | None = None,
        store: ObjectStore | None = None,
        sandbox: Sandbox | None = None,
        skills: SkillRepository | None = None,
    ) -> None:
        self.config = config
        self.model = model if model is not None else make_backend(config)
        if store is None:
            store = ObjectStore(config.objects_dir, config.store_quota_bytes)
        self.store = store
        if registry is None:
            registry = ToolRegistry()
            registry.load_dir(config.tools_dir)
        self.registry = registry
        if sandbox is None:
            sandbox = Sandbox(
                config.workspaces_dir,
                self.store,
                limits=config.limits(),
                interpreter_cmd=config.sandbox.interpreter_cmd,
                preview_bytes=config.caps.inline_cap,
                archive_on_reset=config.sandbox.archive_on_reset,
                extra_env={ENV_TOOLS_DIR: str(config.tools_dir)},
            )
        self.sandbox = sandbox
        if skills is None:
            skills = SkillRepository(
                config.skills_path,
                config.evolve.distill_threshold,
            )
        self.skills = skills

    def run_task(
        self,
        query: str,
        expected: str | None = None,
        rollout: int = 0,
    ) -> RunOutcome:
        """
        Run ``query`` to a final answer.

        Each ``rollout`` index of a query gets its own run id and trajectory
        file, which is what best-of-n selection for SFT export reads.

        The trajectory file always ends with a ``final`` record: exit code 0
        for a planner finish, 3 for a budget-forced finish and 1 with the
        error record when a module error stopped the run.
        """
        if rollout < 0:
            msg = f"rollout index must be non-negative, got {rollout}"
            raise PreconditionViolation(msg)
        cfg = self.config
        run_id = compute_run_id(query, cfg.digest(), cfg.loop_mode.value, rollout)
        path = trajectory_path(cfg.store_dir, run_id)
        logger.info("run %s -> %s", run_id, path)

        with TrajectoryWriter(path) as writer:
            writer.write(
                "run",
                run_id=run_id,
                query=query,
                loop_mode=cfg.loop_mode.value,
                config_digest=cfg.digest(),
                rollout=rollout,
            )
            try:
                decision = self._plan_and_execute(query, writer)
                skill = self._evolve(writer)
            except NexusError as exc:
                logger.error("run %s failed: %s", run_id, exc)
                final = FinalRecord(
                    status=RunStatus.ERROR,
                    exit_code=EXIT_ERROR,
                    error=exc.to_record(),
                )
                writer.write("final", final=final)
                return RunOutcome(
                    run_id=run_id,
                    status=final.status,
                    exit_code=final.exit_code,
                    trajectory_path=path,
                    error=final.error,
                )
            except Exception as exc:
                message = f"{type(exc).__name__}: {exc}"
                final = FinalRecord(
                    status=RunStatus.ERROR,
                    exit_code=EXIT_ERROR,
                    error={"error": "internal_error", "message": message},
                )
                writer.write("final", final=final)
                raise

            reward = None
            if expected is not None:
                result = writer.trajectory.answer_result()
                reward = compute_reward(result, NumericGrader(expected))
            status = RunStatus.FORCED_FINISH if decision.forced else RunStatus.FINISHED
            final = FinalRecord(
                status=status,
                answer=decision.answer,
                exit_code=EXIT_FORCED_FINISH if decision.forced else EXIT_OK,
                expected=expected,
                reward=reward,
            )
            writer.write("final", final=final)

        return RunOutcome(
            run_id=run_id,
            status=final.status,
            exit_code=final.exit_code,
            trajectory_path=path,
            answer=final.answer,
            reward=reward,
            skill_id=skill.skill_id if skill else None,
        )

    # ----------------------------------------------------------------- #
    # Outer loop                                                        #
    # ----------------------------------------------------------------- #
    def _plan_and_execute(
        self,
        query: str,
        writer: TrajectoryWriter,
    ) -> PlannerDecision:
        cfg = self.config
        params = cfg.chat_params()
        retries = cfg.protocol_retries

        intent = recognize_intent(query, self.model, retries, params)
        writer.write("intent", intent=intent)
        skills = self.skills.query(intent, cfg.evolve.skills_in_context)
        writer.write("skills", skill_ids=[s.skill_id for s in skills])
        if cfg.loop_mode is LoopMode.INNER_ONLY:
            outline = runtime_outline(intent, query)
        else:
            outline = draft_outline(intent, self.model, retries, params)
        writer.write("outline", outline=outline)

        state = PlannerState(
            query=query,
            intent=intent,
            outline=outline,
            loop_mode=cfg.loop_mode,
            budgets=cfg.planner_budgets(),
        )
        while True:
            try:
                decision = next_decision(
                    state,
                    self.model,
                    skills=skills,
                    context_cap=cfg.caps.planner_context_cap,
                    retries=retries,
                    params=params,
                )
            except BudgetExhausted as exc:
                logger.warning("forcing finish: %s", exc)
                decision = finish(state, forced=True, reason=str(exc))
            writer.write(
                "decision",
                decision=DecisionRecord(
                    iteration=state.outer_iterations,
                    kind=decision.kind,
                    subtask_ids=[s.subtask_id for s in decision.subtasks],
                    reason=decision.reason,
                    answer=decision.answer,
                    forced=decision.forced,
                ),
            )
            if decision.kind is DecisionKind.FINISH:
                return decision
            if decision.subtasks:
                self._dispatch(state, decision.subtasks, skills, writer)

    def _dispatch(
        self,
        state: PlannerState,
        specs: list[SubTaskSpec],
        skills: list[Skill],
        writer: TrajectoryWriter,
    ) -> None:
        hints = [s.excerpt() for s in skills]
        prepared = [self._prepare(state.intent, spec, hints) for spec in specs]
        workers = min(self.config.max_parallel_subtasks, len(prepared))
        if workers <= 1:
            for spec, block in prepared:
                outcome = self._execute(state, spec, block, writer)
                self._complete(state, *outcome, writer)
            return
        with ThreadPoolExecutor(workers, thread_name_prefix="subtask") as pool:
            futures = [
                pool.submit(self._execute, state, spec, block, writer)
                for spec, block in prepared
            ]
            for future in futures:
                self._complete(state, *future.result(), writer)

    def _prepare(
        self,
        intent: StructuredIntent,
        spec: SubTaskSpec,
        hints: list[str],
    ) -> tuple[SubTaskSpec, ToolContextBlock]:
        block = self._tool_block(intent, spec.goal)
        tools = [self.registry.get(tool_id) for tool_id in block.tool_ids]
        update = {"injected_tools": tools, "skill_hints": hints}
        return spec.model_copy(update=update), block

    def _tool_block(self, intent: StructuredIntent, goal: str) -> ToolContextBlock:
        if not len(self.registry):
            return ToolContextBlock()
        k = self.config.retrieval.k
        try:
            ranked = self.registry.retrieve(intent, goal, k)
        except NoCandidates as exc:
            logger.info("%s; retrying with every domain", exc)
            try:
                ranked = self.registry.retrieve(intent.broadened(), goal, k)
            except NoCandidates:
                return ToolContextBlock()
        return render_context(ranked, self.config.caps.tool_context_cap)

    # ----------------------------------------------------------------- #
    # Inner loop                                                        #
    # ----------------------------------------------------------------- #
    def _execute(
        self,
        state: PlannerState,
        spec: SubTaskSpec,
        block: ToolContextBlock,
        writer: TrajectoryWriter,
    ) -> tuple[SubTaskResult, SubTaskTrace]:
        cfg = self.config
        budgets = cfg.inner_budgets()
        writer.write(
            "subtask_start",
            subtask=SubTaskStart(
                subtask_id=spec.subtask_id,
                goal=spec.goal,
                parent_stage_id=spec.parent_stage_id,
                depends_on=spec.depends_on,
                tool_ids=list(block.tool_ids),
                skill_hints=spec.skill_hints,
                max_steps=budgets.max_steps,
            ),
        )
        self.sandbox.reset_workspace(spec.subtask_id)
        dependencies = [s for s in state.completed if s.subtask_id in spec.depends_on]

        def on_step(step: Step) -> None:
            writer.write("step", subtask_id=spec.subtask_id, step=step)

        return run_subtask(
            spec,
            block,
            self.model,
            self.sandbox,
            self.store,
            budgets,
            dependencies=dependencies,
            inline_cap=cfg.caps.inline_cap,
            params=cfg.chat_params(),
            on_step=on_step,
        )

    def _complete(
        self,
        state: PlannerState,
        result: SubTaskResult,
        trace: SubTaskTrace,
        writer: TrajectoryWriter,
    ) -> None:
        cfg = self.config
        writer.write("subtask_end", result=result, trace_ref=trace.trace_ref)
        compressor = self.model if cfg.evolve.compress_with_model else None
        summary = summarize_result(result, trace, cfg.caps.summary_cap, compressor)
        writer.write("summary", summary=summary)
        integrate_result(state, summary)

    # ----------------------------------------------------------------- #
    # Evolution                                                         #
    # ----------------------------------------------------------------- #
    def _evolve(self, writer: TrajectoryWriter) -> Skill | None:
        cfg = self.config
        critic = self.model if cfg.evolve.critic_with_model else None
        trajectory = writer.trajectory
        report = score_trajectory(trajectory, critic, self.store, cfg.protocol_retries)
        writer.write("critic", report=report)
        skill = distill_skill(
            trajectory,
            report,
            self.store,
            critic,
            cfg.evolve.distill_threshold,
            cfg.protocol_retries,
        )
        if skill is None:
            return None
        if self.skills.add(skill):
            logger.info("skill %s added to %s", skill.skill_id, self.skills.path)
        writer.write("skill", skill=skill)
        return skill
