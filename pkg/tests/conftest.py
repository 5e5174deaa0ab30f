"""Shared fixtures: stores, sandboxes, configs and the Nernst task script."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any

import pytest

from nexus.codeact import parse_actions
from nexus.constants.enums import DecisionKind, RunStatus, SubTaskStatus, TaskType
from nexus.context import SubTaskSummary
from nexus.model_backend import ScriptedBackend
from nexus.object_store import ObjectStore
from nexus.planning import StructuredIntent
from nexus.rlmath import NumericGrader, compute_reward
from nexus.run_config import RunConfig, build_config
from nexus.sandbox import ExecutionLimits, Observation, Sandbox
from nexus.toolhub import ToolRegistry
from nexus.trace import Step, SubTaskResult
from nexus.trajectory import (
    DecisionRecord,
    FinalRecord,
    SubTaskStart,
    Trajectory,
    TrajectoryWriter,
)

MANIFESTS_DIR = Path(__file__).resolve().parent.parent / "manifests"
PYTHON = [sys.executable, "-"]
FAULT_REPLY = "<code>raise ValueError('injected fault')</code>"

NERNST_QUERY = (
    "A galvanic cell has a standard potential E° = 0.637 V and measures 0.568 V "
    "for a two-electron reaction with [ox] = 1e-2 M and [red] = 1e-4 M. "
    "At what temperature (K) is the cell operating?"
)
NERNST_CODE = """\
import math
# E° = 0.637
E0 = 0.637
E = 0.568
n = 2
F = 96485
R = 8.314
Q = 1e-2 / 1e-4
T = (E0 - E) * n * F / (R * math.log(Q))
print(f"{T:.2f}")
"""
NERNST_INTENT = {
    "research_subject": "operating temperature of a galvanic cell",
    "task_type": "computation",
    "domains": ["electrochemistry", "materials"],
    "tool_cues": ["nernst", "temperature"],
}
NERNST_OUTLINE = {
    "stages": [
        {
            "stage_id": "s1",
            "goal": "Solve the Nernst equation for the temperature",
            "success_criterion": "temperature in kelvin",
        },
    ],
}


def nernst_script(*, self_correct: bool = False) -> dict[str, list[Any]]:
    """Replies of a dual-loop Nernst run; ``self_correct`` starts with a broken call."""
    code_replies = []
    if self_correct:
        broken = NERNST_CODE.replace("math.log", "math.ln")
        code_replies.append(f"Use the Nernst equation.\n<code>\n{broken}</code>")
    code_replies += [
        "Solve the Nernst equation for T.\n<code>\n" + NERNST_CODE + "</code>",
        "The script printed 347.76 K.\n<solution>347.7</solution>",
    ]
    return {
        "intent": [NERNST_INTENT],
        "outline": [NERNST_OUTLINE],
        "planner": [
            {
                "kind": "dispatch",
                "subtasks": [
                    {
                        "subtask_id": "compute",
                        "goal": "Compute the cell temperature from the Nernst equation",
                        "parent_stage_id": "s1",
                        "depends_on": [],
                    },
                ],
            },
            {"kind": "finish"},
        ],
        "codeact": code_replies,
    }


@pytest.fixture
def store(tmp_path: Path) -> ObjectStore:
    return ObjectStore(tmp_path / "objects")


@pytest.fixture
def sandbox(tmp_path: Path, store: ObjectStore) -> Sandbox:
    return Sandbox(
        tmp_path / "workspaces",
        store,
        limits=ExecutionLimits(wall_timeout_s=20.0),
        interpreter_cmd=PYTHON,
    )


@pytest.fixture
def registry() -> ToolRegistry:
    tools = ToolRegistry()
    tools.load_dir(MANIFESTS_DIR)
    return tools


@pytest.fixture
def nernst_intent() -> StructuredIntent:
    return StructuredIntent.model_validate(NERNST_INTENT)


@pytest.fixture
def scripted() -> ScriptedBackend:
    return ScriptedBackend(nernst_script())


def make_config(tmp_path: Path, **sections: Any) -> RunConfig:
    """A valid config rooted in ``tmp_path`` with the builtin manifests."""
    store_dir = tmp_path / "store"
    store_dir.mkdir(exist_ok=True)
    raw: dict[str, Any] = {
        "tools_dir": str(MANIFESTS_DIR),
        "store_dir": str(store_dir),
        "backend": {"kind": "scripted", "script": str(_write_script(tmp_path))},
        "sandbox": {"interpreter_cmd": PYTHON, "timeout_s": 20},
        "evolve": {"critic_with_model": False},
    }
    for key, value in sections.items():
        if isinstance(value, dict):
            raw[key] = {**raw.get(key, {}), **value}
        else:
            raw[key] = value
    return build_config(raw, tmp_path, env={})


def _write_script(tmp_path: Path) -> Path:
    path = tmp_path / "script.json"
    if not path.exists():
        path.write_text("{}", encoding="utf-8")
    return path


def simple_intent(
    *domains: str,
    task_type: TaskType = TaskType.COMPUTATION,
) -> StructuredIntent:
    return StructuredIntent(
        research_subject="test subject",
        task_type=task_type,
        domains=list(domains),
    )


def write_trajectory(  # noqa: PLR0913
    path: Path,
    store: ObjectStore,
    *,
    error_steps: int = 0,
    ok_steps: int = 1,
    solution: str | None = "347.7",
    max_steps: int = 10,
    expected: str | None = None,
    query: str = NERNST_QUERY,
) -> Trajectory:
    """Write a one-subtask trajectory: failing steps, passing steps, then a solution."""
    steps = []
    for i in range(error_steps + ok_steps):
        failing = i < error_steps
        reply = FAULT_REPLY if failing else "<code>print(347.76)</code>"
        stdout = "" if failing else "347.76\n"
        stderr = "ValueError: injected fault\n" if failing else ""
        obs = Observation(
            exit_status=1 if failing else 0,
            stdout_ref=store.put_object(stdout.encode(), "text/plain"),
            stderr_ref=store.put_object(stderr.encode(), "text/plain"),
            stdout_preview=stdout,
            stderr_preview=stderr,
        )
        steps.append(
            Step(
                step_index=i,
                model_reply=reply,
                actions=parse_actions(reply),
                observations=[obs],
                error_flag=failing,
            ),
        )
    if solution is not None:
        reply = f"<solution>{solution}</solution>"
        actions = parse_actions(reply)
        steps.append(Step(step_index=len(steps), model_reply=reply, actions=actions))

    solved = solution is not None
    status = SubTaskStatus.SOLVED if solved else SubTaskStatus.BUDGET_EXHAUSTED
    result = SubTaskResult(
        subtask_id="compute",
        status=status,
        solution_text=solution,
        steps=len(steps),
        format_ok=solution is not None and ok_steps > 0,
    )
    answer = solution if solution is not None else "UNKNOWN"
    with TrajectoryWriter(path) as writer:
        writer.write(
            "run",
            run_id=path.stem,
            query=query,
            loop_mode="dual",
            config_digest="0" * 64,
        )
        writer.write("intent", intent=StructuredIntent.model_validate(NERNST_INTENT))
        writer.write("skills", skill_ids=[])
        writer.write("outline", outline=NERNST_OUTLINE)
        dispatch = DecisionRecord(
            iteration=1,
            kind=DecisionKind.DISPATCH,
            subtask_ids=["compute"],
        )
        writer.write("decision", decision=dispatch)
        writer.write(
            "subtask_start",
            subtask=SubTaskStart(
                subtask_id="compute",
                goal="Compute the cell temperature",
                parent_stage_id="s1",
                max_steps=max_steps,
            ),
        )
        for step in steps:
            writer.write("step", subtask_id="compute", step=step)
        writer.write("subtask_end", result=result, trace_ref=None)
        writer.write(
            "summary",
            summary=SubTaskSummary(
                subtask_id="compute",
                status=status,
                goal="Compute the cell temperature",
                solution_text=solution,
            ),
        )
        finish = DecisionRecord(iteration=2, kind=DecisionKind.FINISH, answer=answer)
        writer.write("decision", decision=finish)
        if expected is not None:
            trajectory = writer.trajectory
            reward = compute_reward(trajectory.answer_result(), NumericGrader(expected))
            final = FinalRecord(
                status=RunStatus.FINISHED,
                answer=answer,
                exit_code=0,
                expected=expected,
                reward=reward,
            )
            writer.write("final", final=final)
    return Trajectory.load(path)
