"""
Regular expression patterns for the nexus runtime.

Contains compiled regex patterns for parsing replies, code and queries.
"""

import re
from typing import Final

ACTION_TAG_RE: Final[re.Pattern[str]] = re.compile(r"<(code|solution)>")
OBJ_URL_RE: Final[re.Pattern[str]] = re.compile(r"^obj://sha256/([0-9a-f]{64})$")
JSON_FENCE_RE: Final[re.Pattern[str]] = re.compile(
    r"```(?:json)?\s*(\{[\s\S]*?\})\s*```",
)
OUTPUT_FORMAT_RE: Final[re.Pattern[str]] = re.compile(
    r"Output\s+format\s*:\s*(.+)",
    re.IGNORECASE,
)
CONTRACT_KEY_RE: Final[re.Pattern[str]] = re.compile(r"""['"]([^'"]+)['"]\s*:""")
# `name = value` in code, also inside `# name = value` comments; `==` excluded
ASSIGNMENT_RE: Final[re.Pattern[str]] = re.compile(
    r"^\s*(?:#\s*)?([^\W\d][\w°′]*)\s*=(?!=)\s*([^#\n]+?)\s*(?:#.*)?$",
)
ERROR_LINE_RE: Final[re.Pattern[str]] = re.compile(
    r"^\s*([A-Za-z_][\w.]*(?:Error|Exception|Interrupt|Exit))\b.*$",
)
TOKEN_RE: Final[re.Pattern[str]] = re.compile(r"[^\W_]+")
NUMBER_RE: Final[re.Pattern[str]] = re.compile(
    r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?",
)
TOOL_ID_RE: Final[re.Pattern[str]] = re.compile(r"^[a-z0-9][a-z0-9_.-]*$")
