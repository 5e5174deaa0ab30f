"""Unit tests for sandbox.py."""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

from nexus.constants.keywords import TRUNCATION_MARKER
from nexus.errors import (
    InterpreterMissing,
    PreconditionViolation,
    SandboxUnavailable,
    WorkspaceBusy,
)
from nexus.object_store import ObjectOrigin, ObjectStore
from nexus.sandbox import ExecutionLimits, Sandbox
from nexus.utils import sha256_hex
from tests.conftest import PYTHON


def test_execute_captures_stdout_and_exit_status(
    sandbox: Sandbox,
    store: ObjectStore,
) -> None:
    sandbox.reset_workspace("w")
    obs = sandbox.execute("print(6 * 7)", "w")
    assert obs.ok
    assert obs.exit_status == 0
    assert obs.stdout_preview == "42\n"
    assert store.get_object(obs.stdout_ref) == b"42\n"
    assert not obs.artifact_refs


def test_failing_code_reports_stderr(sandbox: Sandbox) -> None:
    sandbox.reset_workspace("w")
    obs = sandbox.execute("raise ValueError('boom')", "w")
    assert obs.exit_status == 1
    assert "ValueError: boom" in obs.stderr_preview


def test_new_files_become_artifacts(sandbox: Sandbox, store: ObjectStore) -> None:
    sandbox.reset_workspace("w")
    origin = ObjectOrigin(subtask_id="w", step_index=0)
    code = "open('out.csv', 'w').write('a,b\\n1,2\\n')"
    obs = sandbox.execute(code, "w", origin=origin)
    assert len(obs.artifact_refs) == 1
    ref = obs.artifact_refs[0]
    assert ref.media_type == "text/csv"
    assert ref.origin == origin
    assert store.get_object(ref) == b"a,b\n1,2\n"


def test_unchanged_files_are_not_reported_again(sandbox: Sandbox) -> None:
    sandbox.reset_workspace("w")
    sandbox.execute("open('keep.txt', 'w').write('x')", "w")
    obs = sandbox.execute("print(open('keep.txt').read())", "w")
    assert obs.stdout_preview == "x\n"
    assert obs.artifact_refs == []


def test_wall_timeout_kills_the_child(tmp_path: Path, store: ObjectStore) -> None:
    box = Sandbox(tmp_path / "ws", store, interpreter_cmd=PYTHON)
    box.reset_workspace("slow")
    limits = ExecutionLimits(wall_timeout_s=0.5)
    obs = box.execute("import time\ntime.sleep(30)", "slow", limits)
    assert obs.timed_out
    assert obs.exit_status == "timeout"
    assert obs.duration_s < 10


def test_output_is_capped(sandbox: Sandbox, store: ObjectStore) -> None:
    sandbox.reset_workspace("w")
    limits = ExecutionLimits(wall_timeout_s=20, max_output_bytes=100)
    obs = sandbox.execute("print('x' * 5_000_000)", "w", limits)
    assert obs.truncated
    assert obs.exit_status == 0
    assert store.get_object(obs.stdout_ref) == b"x" * 100 + TRUNCATION_MARKER


def test_duration_never_serialized(sandbox: Sandbox) -> None:
    sandbox.reset_workspace("w")
    obs = sandbox.execute("pass", "w")
    assert "duration_s" not in obs.model_dump()


def test_reset_empties_and_can_archive(tmp_path: Path, store: ObjectStore) -> None:
    box = Sandbox(tmp_path / "ws", store, interpreter_cmd=PYTHON, archive_on_reset=True)
    path = box.reset_workspace("w")
    (path / "left.txt").write_text("over")
    assert box.reset_workspace("w") == path
    assert list(path.iterdir()) == []
    assert len(box.archives["w"]) == 1
    assert store.exists(box.archives["w"][0])


def test_workspaces_are_isolated_per_id(sandbox: Sandbox) -> None:
    first = sandbox.reset_workspace("a")
    second = sandbox.reset_workspace("b")
    assert first != second
    sandbox.execute("open('mine.txt', 'w').write('a')", "a")
    obs = sandbox.execute("import os\nprint(os.path.exists('mine.txt'))", "b")
    assert obs.stdout_preview == "False\n"


def test_relative_paths_do_not_reach_a_sibling(sandbox: Sandbox) -> None:
    sandbox.reset_workspace("a")
    sandbox.reset_workspace("b")
    sandbox.execute("open('secret.txt', 'w').write('A-ONLY')", "a")
    # the name workspace a would get without a secret salt
    guess = f"ws-{sha256_hex(chr(0) + 'a')[:20]}"
    code = (
        "try:\n"
        f"    print(open('../{guess}/secret.txt').read())\n"
        "except OSError as exc:\n"
        "    print(type(exc).__name__)\n"
    )
    obs = sandbox.execute(code, "b")
    assert "A-ONLY" not in obs.stdout_preview
    assert obs.stdout_preview == "FileNotFoundError\n"


def test_workspace_names_differ_between_sandboxes(
    tmp_path: Path,
    store: ObjectStore,
) -> None:
    first = Sandbox(tmp_path / "ws", store, interpreter_cmd=PYTHON)
    second = Sandbox(tmp_path / "ws", store, interpreter_cmd=PYTHON)
    assert first.workspace_path("a") != second.workspace_path("a")
    pinned = Sandbox(tmp_path / "ws", store, interpreter_cmd=PYTHON, salt="s")
    expected = f"ws-{sha256_hex('s' + chr(0) + 'a')[:20]}"
    assert pinned.workspace_path("a").name == expected


@pytest.mark.skipif(
    not hasattr(os, "geteuid") or os.geteuid() == 0,
    reason="the superuser ignores directory modes",
)
def test_child_cannot_list_the_workspace_root(sandbox: Sandbox) -> None:
    sandbox.reset_workspace("a")
    sandbox.reset_workspace("b")
    code = (
        "import os\n"
        "try:\n"
        "    print(os.listdir('..'))\n"
        "except PermissionError:\n"
        "    print('denied')\n"
    )
    assert sandbox.execute(code, "b").stdout_preview == "denied\n"


def test_reset_is_refused_while_executing(sandbox: Sandbox) -> None:
    path = sandbox.reset_workspace("w")
    code = "import time\nopen('started', 'w').close()\ntime.sleep(2)"
    with ThreadPoolExecutor(max_workers=1) as pool:
        running = pool.submit(sandbox.execute, code, "w")
        deadline = time.monotonic() + 15
        while not (path / "started").exists() and time.monotonic() < deadline:
            time.sleep(0.05)
        with pytest.raises(WorkspaceBusy):
            sandbox.reset_workspace("w")
        assert running.result().ok
    assert sandbox.reset_workspace("w") == path


def test_network_proxies_point_nowhere(sandbox: Sandbox) -> None:
    sandbox.reset_workspace("w")
    obs = sandbox.execute("import os\nprint(os.environ['HTTPS_PROXY'])", "w")
    assert obs.stdout_preview == "http://127.0.0.1:9\n"


def test_missing_workspace_is_unavailable(sandbox: Sandbox) -> None:
    with pytest.raises(SandboxUnavailable):
        sandbox.execute("print(1)", "never-created")


def test_missing_interpreter(tmp_path: Path, store: ObjectStore) -> None:
    missing = ["no-such-interpreter-xyz", "-"]
    with pytest.raises(InterpreterMissing):
        Sandbox(tmp_path / "ws", store, interpreter_cmd=missing)


def test_limits_must_be_positive() -> None:
    with pytest.raises(PreconditionViolation):
        ExecutionLimits(wall_timeout_s=0)
