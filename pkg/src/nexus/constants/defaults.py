"""
Default budgets, caps and thresholds of the nexus runtime.

Every value here is overridable through the run config.
"""

from typing import Final

# outer loop
MAX_OUTER_ITERATIONS: Final = 8
MAX_SUBTASKS: Final = 16
PROTOCOL_RETRIES: Final = 2

# inner loop
MAX_STEPS: Final = 10
MAX_CONSECUTIVE_ERRORS: Final = 3
OUTER_ONLY_MAX_STEPS: Final = 1

# sparse context (characters / bytes)
SUMMARY_CAP: Final = 4_000
# room for the longest summary header plus a clipped goal
MIN_SUMMARY_CAP: Final = 160
PLANNER_CONTEXT_CAP: Final = 32_000
INLINE_CAP: Final = 2_048
TOOL_CONTEXT_CAP: Final = 6_000
SUMMARY_ITEM_CAP: Final = 400
SKILL_EXCERPT_CAP: Final = 600
PARAMETER_VALUE_CAP: Final = 120
SUBTASK_ID_MAX: Final = 64

# tool retrieval
RETRIEVAL_K: Final = 8
BM25_K1: Final = 1.2
BM25_B: Final = 0.75
SCORE_DECIMALS: Final = 12

# sandbox
SANDBOX_TIMEOUT_S: Final = 30.0
SANDBOX_MAX_OUTPUT_BYTES: Final = 64 * 1024
SANDBOX_WORKSPACE_QUOTA_BYTES: Final = 256 * 1024 * 1024
SANDBOX_INTERPRETER_CMD: Final = ("python3", "-")
STORE_QUOTA_BYTES: Final = 4 * 1024 * 1024 * 1024

# self-evolution
DISTILL_THRESHOLD: Final = 0.8
SKILLS_IN_CONTEXT: Final = 3

# rlmath
EPS_LOW: Final = 0.2
EPS_HIGH: Final = 0.28
EPS_NORM: Final = 1e-8
OUTCOME_REWARD: Final = 0.9
FORMAT_REWARD: Final = 0.1

# live backend
HTTP_TIMEOUT_S: Final = 120.0
HTTP_RETRIES: Final = 3
HTTP_BACKOFF_S: Final = 0.5
