"""
Utility helpers for the nexus runtime.

Contains small, reusable functions used across the project.
"""

from __future__ import annotations

import hashlib
import json
from typing import TYPE_CHECKING, Any

from nexus.constants.regexps import JSON_FENCE_RE

if TYPE_CHECKING:
    from pydantic import BaseModel


def canonical_json(data: Any) -> str:
    """
    Return the canonical JSON text of ``data``.

    Keys are sorted and separators compact, so equal data always yields
    byte-identical text.
    """
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def model_json(model: BaseModel) -> str:
    """Canonical JSON text of a pydantic model."""
    return canonical_json(model.model_dump(mode="json"))


def sha256_hex(data: bytes | str) -> str:
    """Hex SHA-256 of ``data`` (strings are UTF-8 encoded)."""
    raw = data.encode() if isinstance(data, str) else data
    return hashlib.sha256(raw).hexdigest()


def clamp(value: float, low: float = 0.0, high: float = 1.0) -> float:
    return max(low, min(high, value))


def clip_text(text: str, limit: int, marker: str = "…") -> str:
    """
    Return ``text`` shortened to at most ``limit`` characters.

    Args:
        text: Text to shorten.
        limit: Maximum length of the result, marker included.
        marker: Appended when something was cut.

    Returns:
        ``text`` itself when it fits, otherwise its head plus ``marker``.
    """
    if len(text) <= limit:
        return text
    if limit <= len(marker):
        return text[:limit]
    return text[: limit - len(marker)] + marker


def clip_bytes(data: bytes, limit: int) -> str:
    """Decode at most ``limit`` leading bytes, dropping a split code point."""
    return data[:limit].decode("utf-8", errors="ignore")


def first_line(text: str) -> str:
    """First non-blank line of ``text`` (stripped), or ``""``."""
    for line in text.splitlines():
        if line.strip():
            return line.strip()
    return ""


def extract_json_object(reply: str) -> Any:
    """
    Return the first JSON object found in a model reply.

    Fenced ```json blocks win; otherwise the text from the first ``{`` is
    decoded with :meth:`json.JSONDecoder.raw_decode`.

    Raises:
        ValueError: When no JSON object can be decoded.
    """
    fenced = JSON_FENCE_RE.search(reply)
    if fenced:
        return json.loads(fenced.group(1))

    decoder = json.JSONDecoder()
    start = reply.find("{")
    while start >= 0:
        try:
            obj, _ = decoder.raw_decode(reply, start)
        except json.JSONDecodeError:
            start = reply.find("{", start + 1)
            continue
        return obj

    msg = "no JSON object in reply"
    raise ValueError(msg)
