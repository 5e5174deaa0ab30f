"""
Keyword constants for the nexus runtime.

Defines special string values used for tagging, addressing or marking data.
"""

from typing import Final

UNKNOWN: Final = "UNKNOWN"

OBJ_URL_PREFIX: Final = "obj://sha256/"

# Request purposes. They route scripted replies and never enter the request hash.
PURPOSE_INTENT: Final = "intent"
PURPOSE_OUTLINE: Final = "outline"
PURPOSE_PLANNER: Final = "planner"
PURPOSE_CODEACT: Final = "codeact"
PURPOSE_CRITIC: Final = "critic"
PURPOSE_COMPRESS: Final = "compress"
PURPOSE_DISTILL: Final = "distill"

INNER_ONLY_SUBTASK_ID: Final = "task"
INNER_ONLY_STAGE_ID: Final = "stage-1"

RUNTIME_PRODUCER: Final = "runtime"

SFT_FORMAT: Final = "nexus-sft"
SFT_FORMAT_VERSION: Final = 1

TRUNCATION_MARKER: Final = b"\n[output truncated]\n"

ENV_MODEL_URL: Final = "NEXUS_MODEL_URL"
ENV_MODEL_KEY: Final = "NEXUS_MODEL_KEY"
ENV_PREFIX: Final = "NEXUS_"
ENV_TOOLS_DIR: Final = "NEXUS_TOOLS_DIR"
