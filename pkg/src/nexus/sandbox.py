"""
Process-level sandbox for code actions.

Each subtask gets its own workspace directory; code runs as a child process
of the configured interpreter with the workspace as cwd and HOME, the code
itself fed on stdin. Outputs and new or modified workspace files are moved
into the object store, so callers only ever handle references.
"""

from __future__ import annotations

import logging
import mimetypes
import os
import secrets
import shutil
import signal
import subprocess
import sys
import tarfile
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path
from typing import IO, TYPE_CHECKING, Literal

from pydantic import BaseModel, ConfigDict, Field

from nexus.constants import defaults
from nexus.constants.keywords import TRUNCATION_MARKER
from nexus.errors import (
    InterpreterMissing,
    PreconditionViolation,
    SandboxUnavailable,
    WorkspaceBusy,
)
from nexus.object_store import ObjectOrigin, ObjectRef, ObjectStore
from nexus.utils import clip_bytes, sha256_hex

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence

logger = logging.getLogger(__name__)

TIMEOUT: Literal["timeout"] = "timeout"
# Write and search only: a child cannot list the root to find its siblings.
WORKSPACE_ROOT_MODE = 0o300
WORKSPACE_MODE = 0o700
_CHUNK = 65536
_DRAIN_GRACE_S = 5.0
# Proxy variables point at the discard port unless the network is allowed.
_DEAD_PROXY = "http://127.0.0.1:9"
_PROXY_VARS = (
    "HTTP_PROXY",
    "HTTPS_PROXY",
    "ALL_PROXY",
    "http_proxy",
    "https_proxy",
    "all_proxy",
)


@dataclass(slots=True, frozen=True)
class ExecutionLimits:
    wall_timeout_s: float = defaults.SANDBOX_TIMEOUT_S
    max_output_bytes: int = defaults.SANDBOX_MAX_OUTPUT_BYTES
    network_allowed: bool = False
    workspace_quota_bytes: int = defaults.SANDBOX_WORKSPACE_QUOTA_BYTES

    def __post_init__(self) -> None:
        if self.wall_timeout_s <= 0:
            msg = "wall_timeout_s must be positive"
            raise PreconditionViolation(msg)
        if self.max_output_bytes <= 0:
            msg = "max_output_bytes must be positive"
            raise PreconditionViolation(msg)
        if self.workspace_quota_bytes <= 0:
            msg = "workspace_quota_bytes must be positive"
            raise PreconditionViolation(msg)


class Observation(BaseModel):
    """What one execution left behind. ``duration_s`` is never serialized."""

    model_config = ConfigDict(frozen=True)

    exit_status: int | Literal["timeout"]
    stdout_ref: ObjectRef
    stderr_ref: ObjectRef
    stdout_preview: str = ""
    stderr_preview: str = ""
    artifact_refs: list[ObjectRef] = Field(default_factory=list)
    truncated: bool = False
    quota_exceeded: bool = False
    duration_s: float = Field(default=0.0, exclude=True)

    @property
    def timed_out(self) -> bool:
        return self.exit_status == TIMEOUT

    @property
    def ok(self) -> bool:
        return self.exit_status == 0

    @property
    def refs(self) -> list[ObjectRef]:
        return [self.stdout_ref, self.stderr_ref, *self.artifact_refs]


class Sandbox:
    """
    Runs code in per-workspace child processes.

    Executions on distinct workspaces may run concurrently; executions on
    the same workspace are serialized by a per-workspace lock.
    """

    def __init__(  # noqa: PLR0913
        self,
        root: Path,
        store: ObjectStore,
        *,
        limits: ExecutionLimits | None = None,
        interpreter_cmd: Sequence[str] = defaults.SANDBOX_INTERPRETER_CMD,
        preview_bytes: int = defaults.INLINE_CAP,
        salt: str | None = None,
        archive_on_reset: bool = False,
        extra_env: Mapping[str, str] | None = None,
    ) -> None:
        """
        Create a sandbox rooted at ``root``.

        Workspace names are keyed by ``salt``, a fresh random token unless
        given; it never reaches the child environment.

        Raises:
            InterpreterMissing: When ``interpreter_cmd[0]`` cannot be found.
        """
        if not interpreter_cmd:
            msg = "empty interpreter command"
            raise InterpreterMissing(msg)
        if shutil.which(interpreter_cmd[0]) is None:
            msg = f"interpreter not found: {interpreter_cmd[0]!r}"
            raise InterpreterMissing(msg)

        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.root.chmod(WORKSPACE_ROOT_MODE)
        self.store = store
        self.limits = limits or ExecutionLimits()
        self.interpreter_cmd = list(interpreter_cmd)
        self.preview_bytes = preview_bytes
        self._salt = salt if salt is not None else secrets.token_hex(16)
        self.archive_on_reset = archive_on_reset
        self.extra_env = dict(extra_env or {})
        self.archives: dict[str, list[ObjectRef]] = defaultdict(list)
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()

    # ----------------------------------------------------------------- #
    # Workspaces                                                        #
    # ----------------------------------------------------------------- #
    def workspace_path(self, workspace_id: str) -> Path:
        digest = sha256_hex(self._salt + "\x00" + workspace_id)[:20]
        return self.root / f"ws-{digest}"

    def _lock_for(self, workspace_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks[workspace_id]

    def ensure_workspace(self, workspace_id: str) -> Path:
        path = self.workspace_path(workspace_id)
        if not path.is_dir():
            _make_workspace(path)
        return path

    def reset_workspace(self, workspace_id: str) -> Path:
        """
        Return the workspace emptied (created when missing).

        With ``archive_on_reset`` the prior contents are put in the object
        store as a tar archive, listed in ``archives[workspace_id]``.

        Raises:
            WorkspaceBusy: While an execution in the workspace is active.
        """
        lock = self._lock_for(workspace_id)
        if not lock.acquire(blocking=False):
            msg = f"workspace {workspace_id!r} has an active execution"
            raise WorkspaceBusy(msg)
        try:
            path = self.workspace_path(workspace_id)
            if path.exists():
                if self.archive_on_reset and any(path.iterdir()):
                    self.archives[workspace_id].append(self._archive(path))
                shutil.rmtree(path)
            _make_workspace(path)
            return path
        finally:
            lock.release()

    def _archive(self, path: Path) -> ObjectRef:
        buffer = BytesIO()
        with tarfile.open(fileobj=buffer, mode="w") as tar:
            for item in sorted(path.rglob("*")):
                tar.add(item, arcname=str(item.relative_to(path)), recursive=False)
        return self.store.put_object(buffer.getvalue(), "application/x-tar")

    # ----------------------------------------------------------------- #
    # Execution                                                         #
    # ----------------------------------------------------------------- #
    def execute(
        self,
        code: str,
        workspace_id: str,
        limits: ExecutionLimits | None = None,
        origin: ObjectOrigin | None = None,
    ) -> Observation:
        """
        Run ``code`` in the workspace and return its observation.

        The child runs in its own session; its whole process group is
        killed when the call returns, whatever the outcome.

        Raises:
            SandboxUnavailable: When the workspace is missing or the child
                process cannot be started.
        """
        limits = limits or self.limits
        workspace = self.workspace_path(workspace_id)
        if not workspace.is_dir():
            msg = f"workspace {workspace_id!r} does not exist"
            raise SandboxUnavailable(msg)

        with self._lock_for(workspace_id):
            before = _snapshot(workspace)
            started = time.monotonic()
            exit_status, out, err = self._run(code, workspace, limits)
            duration = time.monotonic() - started
            stdout, out_cut = out.result()
            stderr, err_cut = err.result()
            after = _snapshot(workspace)

            artifacts = [
                self.store.put_object(
                    (workspace / rel).read_bytes(),
                    mimetypes.guess_type(rel)[0] or "application/octet-stream",
                    origin,
                )
                for rel in sorted(after)
                if before.get(rel) != after[rel]
            ]
            used = sum(size for size, _ in after.values())

        logger.debug(
            "executed in %s: exit=%s in %.2fs", workspace_id, exit_status, duration
        )
        return Observation(
            exit_status=exit_status,
            stdout_ref=self.store.put_object(stdout, "text/plain", origin),
            stderr_ref=self.store.put_object(stderr, "text/plain", origin),
            stdout_preview=clip_bytes(stdout, self.preview_bytes),
            stderr_preview=clip_bytes(stderr, self.preview_bytes),
            artifact_refs=artifacts,
            truncated=out_cut or err_cut,
            quota_exceeded=used > limits.workspace_quota_bytes,
            duration_s=duration,
        )

    def _run(
        self,
        code: str,
        workspace: Path,
        limits: ExecutionLimits,
    ) -> tuple[int | Literal["timeout"], _CappedDrain, _CappedDrain]:
        preexec = _rlimits(limits) if os.name == "posix" else None
        try:
            proc = subprocess.Popen(
                self.interpreter_cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=workspace,
                env=self._child_env(workspace, limits),
                start_new_session=True,
                preexec_fn=preexec,  # noqa: PLW1509
            )
        except OSError as exc:
            msg = f"cannot start {self.interpreter_cmd[0]!r}: {exc}"
            raise SandboxUnavailable(msg) from exc

        cap = limits.max_output_bytes
        out = _CappedDrain(proc.stdout, cap)  # type: ignore[arg-type]
        err = _CappedDrain(proc.stderr, cap)  # type: ignore[arg-type]
        feeder = threading.Thread(
            target=_feed,
            args=(proc.stdin, code.encode()),
            daemon=True,
        )
        feeder.start()
        status: int | Literal["timeout"]
        try:
            status = proc.wait(timeout=limits.wall_timeout_s)
        except subprocess.TimeoutExpired:
            status = TIMEOUT
        finally:
            _kill_group(proc.pid)
            proc.wait()
        return status, out, err

    def _child_env(self, workspace: Path, limits: ExecutionLimits) -> dict[str, str]:
        env = {
            "PATH": os.environ.get("PATH", os.defpath),
            "HOME": str(workspace),
            "LANG": "C.UTF-8",
            "PYTHONHASHSEED": "0",
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONIOENCODING": "utf-8",
        }
        env.update(self.extra_env)
        if not limits.network_allowed:
            env.update(dict.fromkeys(_PROXY_VARS, _DEAD_PROXY))
            env["NO_PROXY"] = env["no_proxy"] = ""
        return env


# --------------------------------------------------------------------- #
# Private helpers                                                       #
# --------------------------------------------------------------------- #
def _rlimits(limits: ExecutionLimits) -> Callable[[], None]:
    cpu_seconds = int(limits.wall_timeout_s) + 1
    file_bytes = limits.workspace_quota_bytes

    def apply() -> None:
        import resource  # noqa: PLC0415

        resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds + 1))
        resource.setrlimit(resource.RLIMIT_FSIZE, (file_bytes, file_bytes))

    return apply


def _kill_group(pid: int) -> None:
    if sys.platform == "win32":
        return
    try:
        os.killpg(pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


class _CappedDrain:
    """Reads a pipe to EOF on a thread, keeping at most ``limit + 1`` bytes."""

    def __init__(self, pipe: IO[bytes], limit: int) -> None:
        self._pipe = pipe
        self._limit = limit
        self._buffer = bytearray()
        self._thread = threading.Thread(target=self._pump, daemon=True)
        self._thread.start()

    def _pump(self) -> None:
        fd = self._pipe.fileno()
        try:
            while chunk := os.read(fd, _CHUNK):
                room = self._limit + 1 - len(self._buffer)
                if room > 0:
                    self._buffer += chunk[:room]
        finally:
            self._pipe.close()

    def result(self) -> tuple[bytes, bool]:
        # a grandchild that left the process group may hold the pipe open
        self._thread.join(_DRAIN_GRACE_S)
        data = bytes(self._buffer)
        if len(data) > self._limit:
            return data[: self._limit] + TRUNCATION_MARKER, True
        return data, False


def _feed(stdin: IO[bytes], data: bytes) -> None:
    try:
        stdin.write(data)
        stdin.close()
    except OSError:
        pass


def _make_workspace(path: Path) -> None:
    path.mkdir()
    path.chmod(WORKSPACE_MODE)


def _snapshot(workspace: Path) -> dict[str, tuple[int, int]]:
    state: dict[str, tuple[int, int]] = {}
    for path in workspace.rglob("*"):
        if path.is_file() and not path.is_symlink():
            stat = path.stat()
            state[str(path.relative_to(workspace))] = (stat.st_size, stat.st_mtime_ns)
    return state
