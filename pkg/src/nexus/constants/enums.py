"""
Enumerations shared by the nexus runtime modules.

Defines the closed value sets of intents, loops, tools, subtasks, critics and
the surrogate objective.
"""

from enum import Enum, unique


@unique
class TaskType(str, Enum):
    ANALYSIS = "analysis"
    COMPUTATION = "computation"
    RETRIEVAL = "retrieval"
    DESIGN = "design"
    DIAGNOSIS = "diagnosis"
    OTHER = "other"


@unique
class LoopMode(str, Enum):
    DUAL = "dual"
    OUTER_ONLY = "outer_only"
    INNER_ONLY = "inner_only"


@unique
class DecisionKind(str, Enum):
    DISPATCH = "dispatch"
    REPLAN = "replan"
    FINISH = "finish"


@unique
class ToolClass(str, Enum):
    DOMAIN_SPECIFIC = "domain_specific"
    LITERATURE_RETRIEVAL = "literature_retrieval"
    GENERAL_UTILITY = "general_utility"


@unique
class EntrypointKind(str, Enum):
    SUBPROCESS = "subprocess"
    BUILTIN = "builtin"


@unique
class ActionKind(str, Enum):
    CODE = "code"
    SOLUTION = "solution"


@unique
class SubTaskStatus(str, Enum):
    SOLVED = "solved"
    FAILED = "failed"
    BUDGET_EXHAUSTED = "budget_exhausted"


@unique
class RunStatus(str, Enum):
    FINISHED = "finished"
    FORCED_FINISH = "forced_finish"
    ERROR = "error"


@unique
class ScoredBy(str, Enum):
    MODEL = "model"
    DETERMINISTIC_PROXY = "deterministic_proxy"


@unique
class ObjectiveForm(str, Enum):
    PER_TRAJECTORY_MEAN = "per_trajectory_mean"
    TOKEN_POOLED = "token_pooled"


@unique
class BackendKind(str, Enum):
    LIVE = "live"
    REPLAY = "replay"
    SCRIPTED = "scripted"
