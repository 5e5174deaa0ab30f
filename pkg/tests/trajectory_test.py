"""Unit tests for trajectory.py."""

from pathlib import Path

import pytest

from nexus.constants.enums import DecisionKind, SubTaskStatus
from nexus.errors import TrajectoryNotFound
from nexus.object_store import ObjectStore
from nexus.trajectory import (
    DecisionRecord,
    Trajectory,
    TrajectoryWriter,
    compute_run_id,
    find_trajectory,
    task_id_of,
    trajectory_path,
)
from tests.conftest import FAULT_REPLY, NERNST_QUERY, write_trajectory


def test_run_id_depends_on_query_config_mode_and_rollout() -> None:
    base = compute_run_id("q", "d" * 64, "dual")
    assert len(base) == 16
    assert compute_run_id("q", "d" * 64, "dual") == base
    assert compute_run_id("q2", "d" * 64, "dual") != base
    assert compute_run_id("q", "e" * 64, "dual") != base
    assert compute_run_id("q", "d" * 64, "inner_only") != base
    assert compute_run_id("q", "d" * 64, "dual", rollout=0) == base
    assert compute_run_id("q", "d" * 64, "dual", rollout=1) != base


def test_find_by_id_or_path(tmp_path: Path, store: ObjectStore) -> None:
    path = trajectory_path(tmp_path, "abc")
    write_trajectory(path, store)
    assert find_trajectory(tmp_path, "abc") == path
    assert find_trajectory(tmp_path, str(path)) == path
    with pytest.raises(TrajectoryNotFound, match="nope"):
        find_trajectory(tmp_path, "nope")
    with pytest.raises(TrajectoryNotFound):
        Trajectory.load(tmp_path / "missing.jsonl")


def test_loaded_view(tmp_path: Path, store: ObjectStore) -> None:
    path = tmp_path / "run.jsonl"
    trajectory = write_trajectory(path, store, error_steps=1, expected="347.7")
    assert trajectory.run_id == "run"
    assert trajectory.task_id == task_id_of(NERNST_QUERY)
    assert trajectory.intent is not None
    assert trajectory.intent.domains == ["chemistry", "materials"]
    assert trajectory.total_steps == 3
    assert trajectory.error_steps == 1
    assert trajectory.step_budget == 10
    assert trajectory.subtasks["compute"].result.status is SubTaskStatus.SOLVED
    assert trajectory.final_answer == "347.7"
    assert trajectory.status_text == "finished"
    assert trajectory.reward is not None
    assert trajectory.reward.total == pytest.approx(1.0)


def test_bytes_survive_a_reload(tmp_path: Path, store: ObjectStore) -> None:
    path = tmp_path / "run.jsonl"
    trajectory = write_trajectory(path, store)
    assert trajectory.to_jsonl() == path.read_bytes()
    assert "duration_s" not in path.read_text()
    assert "time" not in {key for record in trajectory.records for key in record}


def test_states_before_the_end(tmp_path: Path) -> None:
    with TrajectoryWriter(tmp_path / "open.jsonl") as writer:
        header = {"run_id": "open", "query": "q", "loop_mode": "dual"}
        writer.write("run", **header, config_digest="0" * 64)
        assert writer.trajectory.status_text == "running"
        assert writer.trajectory.final_answer is None
        forced = DecisionRecord(
            iteration=1,
            kind=DecisionKind.FINISH,
            answer="UNKNOWN",
            forced=True,
        )
        writer.write("decision", decision=forced)
        assert writer.trajectory.status_text == "forced_finish"
    # each record is flushed as it is written
    assert len((tmp_path / "open.jsonl").read_text().splitlines()) == 2


def test_unknown_records_are_skipped(tmp_path: Path) -> None:
    path = tmp_path / "extra.jsonl"
    path.write_text('{"kind": "note", "text": "hi"}\n\n', encoding="utf-8")
    trajectory = Trajectory.load(path)
    assert trajectory.records == [{"kind": "note", "text": "hi"}]


def test_steps_frame(tmp_path: Path, store: ObjectStore) -> None:
    trajectory = write_trajectory(tmp_path / "run.jsonl", store, error_steps=2)
    frame = trajectory.steps_frame()
    assert list(frame["step_index"]) == [0, 1, 2, 3]
    assert list(frame["error_flag"]) == [True, True, False, False]
    assert list(frame["has_solution"]) == [False, False, False, True]
    assert frame["observations"].sum() == 3


def test_empty_steps_frame_keeps_columns() -> None:
    frame = Trajectory().steps_frame()
    assert frame.empty
    assert "error_flag" in frame.columns


def test_reply_text_interleaves_observations(
    tmp_path: Path,
    store: ObjectStore,
) -> None:
    trajectory = write_trajectory(tmp_path / "run.jsonl", store, error_steps=1)
    text = trajectory.reply_text()
    fault = text.index("ValueError: injected fault")
    assert text.index(FAULT_REPLY) < fault < text.index("<solution>")


def test_sft_candidate(tmp_path: Path, store: ObjectStore) -> None:
    trajectory = write_trajectory(tmp_path / "a.jsonl", store, expected="347.7")
    rewarded = trajectory.sft_candidate()
    assert rewarded.query == NERNST_QUERY
    assert rewarded.reward == pytest.approx(1.0)
    assert "<solution>347.7</solution>" in rewarded.text
    unrewarded = write_trajectory(tmp_path / "b.jsonl", store).sft_candidate()
    assert unrewarded.reward == 0.0


def test_wrong_answer_earns_only_the_format_reward(
    tmp_path: Path,
    store: ObjectStore,
) -> None:
    trajectory = write_trajectory(tmp_path / "run.jsonl", store, expected="400")
    assert trajectory.reward.total == pytest.approx(0.1)


def test_render_is_capped(tmp_path: Path, store: ObjectStore) -> None:
    trajectory = write_trajectory(tmp_path / "run.jsonl", store, error_steps=1)
    full = trajectory.render()
    assert "Final answer (finished): 347.7" in full
    assert "Steps: 3 (1 with errors)" in full
    assert len(trajectory.render(cap=80)) <= 80
