"""
Error hierarchy of the nexus runtime.

Every error carries a stable snake_case ``code`` that the CLI puts in its
machine-readable error record.
"""

from __future__ import annotations


class NexusError(Exception):
    """Base class of every error raised on purpose by the runtime."""

    code = "nexus_error"

    def to_record(self) -> dict[str, str]:
        return {"error": self.code, "message": str(self)}


# --------------------------------------------------------------------- #
# Configuration                                                         #
# --------------------------------------------------------------------- #
class ConfigError(NexusError):
    code = "config_error"


class InterpreterMissing(ConfigError):
    code = "interpreter_missing"


# --------------------------------------------------------------------- #
# Model backends                                                        #
# --------------------------------------------------------------------- #
class ModelError(NexusError):
    code = "model_error"


class ModelProtocolError(ModelError):
    """The reply could not be parsed into the expected schema."""

    code = "model_protocol_error"


class TransportError(ModelError):
    code = "transport_error"


class RateLimited(TransportError):
    code = "rate_limited"


class ReplayMiss(ModelError):
    """A replay fixture has no reply for the request; never fabricated."""

    code = "replay_miss"


class ScriptExhausted(ReplayMiss):
    code = "script_exhausted"


# --------------------------------------------------------------------- #
# Planning                                                              #
# --------------------------------------------------------------------- #
class PreconditionViolation(NexusError, ValueError):
    code = "precondition_violation"


class BudgetExhausted(NexusError):
    """The outer loop may not take another decision; finish with what exists."""

    code = "budget_exhausted"


class UnknownSubtask(NexusError, KeyError):
    code = "unknown_subtask"

    def __str__(self) -> str:
        return Exception.__str__(self)


# --------------------------------------------------------------------- #
# Tools                                                                 #
# --------------------------------------------------------------------- #
class ToolError(NexusError):
    code = "tool_error"


class DuplicateTool(ToolError):
    code = "duplicate_tool"


class InvalidManifest(ToolError):
    code = "invalid_manifest"


class NoCandidates(ToolError):
    """Domain filtering left nothing; the planner should broaden domains."""

    code = "no_candidates"


class UnknownTool(ToolError):
    code = "unknown_tool"


class InvalidToolInput(ToolError):
    code = "invalid_tool_input"


# --------------------------------------------------------------------- #
# Execution                                                             #
# --------------------------------------------------------------------- #
class MalformedAction(NexusError):
    code = "malformed_action"


class SandboxUnavailable(NexusError):
    code = "sandbox_unavailable"


class WorkspaceBusy(NexusError):
    code = "workspace_busy"


# --------------------------------------------------------------------- #
# Storage                                                               #
# --------------------------------------------------------------------- #
class StorageError(NexusError):
    code = "storage_error"


class StorageFull(StorageError):
    code = "storage_full"


class NotFound(StorageError, KeyError):
    code = "not_found"

    def __str__(self) -> str:
        return Exception.__str__(self)


class CorruptObject(StorageError):
    code = "corrupt_object"


class InvalidObjectRef(StorageError, ValueError):
    code = "invalid_object_ref"


# --------------------------------------------------------------------- #
# Trajectories                                                          #
# --------------------------------------------------------------------- #
class TrajectoryNotFound(NexusError):
    code = "trajectory_not_found"
