"""
Chat-completion backends.

Public API
~~~~~~~~~~
* :class:`ChatRequest` / :class:`ChatReply` - the wire documents.
* :class:`LiveBackend` - OpenAI-compatible HTTP client with retry/backoff.
* :class:`ReplayBackend` - frozen fixture lookup by canonical request hash.
* :class:`RecordingBackend` - wraps any backend and freezes its replies.
* :class:`ScriptedBackend` - queued replies per request purpose.
* :func:`complete_json` - structured completion with validation re-prompts.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from pathlib import Path
from typing import TYPE_CHECKING, Any, Literal, TypeVar

import httpx
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from nexus.constants import defaults
from nexus.constants.keywords import ENV_MODEL_KEY, ENV_MODEL_URL
from nexus.constants.prompts import JSON_REPROMPT
from nexus.errors import (
    ConfigError,
    ModelProtocolError,
    RateLimited,
    ReplayMiss,
    ScriptExhausted,
    TransportError,
)
from nexus.utils import canonical_json, extract_json_object, sha256_hex

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

T = TypeVar("T", bound=BaseModel)

STOP = "stop"
HTTP_TOO_MANY_REQUESTS = 429
HTTP_SERVER_ERROR = 500


class ChatMessage(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Literal["system", "user", "assistant"]
    content: str


class ChatParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    temperature: float = 0.0
    max_tokens: int | None = None
    model_name: str = "default"


class ChatRequest(BaseModel):
    """
    Ordered messages plus sampling params.

    ``purpose`` routes scripted replies and is excluded from the hash and
    from serialization.
    """

    model_config = ConfigDict(frozen=True)

    messages: list[ChatMessage] = Field(min_length=1)
    params: ChatParams = Field(default_factory=ChatParams)
    purpose: str = Field(default="", exclude=True)

    @classmethod
    def of(
        cls,
        system: str,
        user: str,
        purpose: str,
        params: ChatParams | None = None,
    ) -> ChatRequest:
        return cls(
            messages=[
                ChatMessage(role="system", content=system),
                ChatMessage(role="user", content=user),
            ],
            params=params or ChatParams(),
            purpose=purpose,
        )

    def extended(self, *messages: ChatMessage) -> ChatRequest:
        return self.model_copy(update={"messages": [*self.messages, *messages]})

    @property
    def size(self) -> int:
        """Total characters of message content."""
        return sum(len(m.content) for m in self.messages)


class ChatReply(BaseModel):
    model_config = ConfigDict(frozen=True)

    content: str
    finish_reason: str = STOP
    usage: dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _empty_needs_reason(self) -> ChatReply:
        if not self.content and self.finish_reason == STOP:
            msg = "empty reply content with a normal finish reason"
            raise ValueError(msg)
        return self


def request_hash(request: ChatRequest) -> str:
    """
    Canonical hash of a request.

    SHA-256 over length-prefixed role/content pairs plus the model name;
    order-sensitive and whitespace-exact, sampling params excluded.
    """
    parts: list[str] = []
    for message in request.messages:
        for field in (message.role, message.content):
            parts.append(f"{len(field.encode())}:{field}")
    name = request.params.model_name
    parts.append(f"{len(name.encode())}:{name}")
    return sha256_hex("".join(parts))


class ModelBackend(ABC):
    """A chat-completion endpoint. Implementations are thread-safe."""

    @abstractmethod
    def complete(self, request: ChatRequest) -> ChatReply: ...


# --------------------------------------------------------------------- #
# Live                                                                  #
# --------------------------------------------------------------------- #
class LiveBackend(ModelBackend):
    """One HTTP round trip per call to an OpenAI-compatible endpoint."""

    def __init__(  # noqa: PLR0913
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        model_name: str | None = None,
        retries: int = defaults.HTTP_RETRIES,
        backoff_s: float = defaults.HTTP_BACKOFF_S,
        timeout_s: float = defaults.HTTP_TIMEOUT_S,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = client or httpx.Client(timeout=timeout_s)
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.headers = headers
        self.model_name = model_name
        self.retries = retries
        self.backoff_s = backoff_s
        self._sleep = sleep

    @classmethod
    def from_env(cls, **kwargs: Any) -> LiveBackend:
        url = os.environ.get(ENV_MODEL_URL)
        if not url:
            msg = f"{ENV_MODEL_URL} is not set"
            raise ConfigError(msg)
        return cls(url, os.environ.get(ENV_MODEL_KEY), **kwargs)

    def complete(self, request: ChatRequest) -> ChatReply:
        payload: dict[str, Any] = {
            "model": self.model_name or request.params.model_name,
            "messages": [m.model_dump() for m in request.messages],
            "temperature": request.params.temperature,
        }
        if request.params.max_tokens is not None:
            payload["max_tokens"] = request.params.max_tokens

        last: TransportError | None = None
        for attempt in range(self.retries + 1):
            delay = self.backoff_s * 2**attempt
            try:
                response = self.client.post(
                    self.url,
                    json=payload,
                    headers=self.headers,
                )
            except httpx.TransportError as exc:
                last = TransportError(f"{type(exc).__name__}: {exc}")
            else:
                if response.status_code == HTTP_TOO_MANY_REQUESTS:
                    last = RateLimited(f"rate limited by {self.url}")
                    delay = _retry_after(response) or delay
                elif response.status_code >= HTTP_SERVER_ERROR:
                    last = TransportError(f"server error {response.status_code}")
                elif response.is_error:
                    body = response.text[:200]
                    msg = f"request rejected: {response.status_code} {body}"
                    raise TransportError(msg)
                else:
                    return _parse_completion(response.json())

            if attempt < self.retries:
                logger.warning("%s; retrying in %.1fs", last, delay)
                self._sleep(delay)

        assert last is not None  # noqa: S101
        raise last


def _retry_after(response: httpx.Response) -> float | None:
    try:
        return float(response.headers["Retry-After"])
    except (KeyError, ValueError):
        return None


def _parse_completion(body: dict[str, Any]) -> ChatReply:
    try:
        choice = body["choices"][0]
        return ChatReply(
            content=choice["message"].get("content") or "",
            finish_reason=choice.get("finish_reason") or STOP,
            usage={
                k: v
                for k, v in (body.get("usage") or {}).items()
                if isinstance(v, int)
            },
        )
    except (KeyError, IndexError, TypeError, ValidationError) as exc:
        msg = f"unexpected completion body: {exc}"
        raise TransportError(msg) from exc


# --------------------------------------------------------------------- #
# Fixtures: replay and record                                           #
# --------------------------------------------------------------------- #
class FixtureEntry(BaseModel):
    hash: str
    hits: int = 1
    reply: ChatReply


def load_fixture(path: Path) -> list[FixtureEntry]:
    """Read a JSONL fixture; blank lines are skipped."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        msg = f"replay fixture not found: {path}"
        raise ConfigError(msg) from None
    return [FixtureEntry.model_validate_json(line) for line in lines if line.strip()]


def save_fixture(entries: Iterable[FixtureEntry], path: Path) -> None:
    """Write entries in order, one canonical JSON object per line, atomically."""
    path = Path(path)
    text = "".join(canonical_json(e.model_dump(mode="json")) + "\n" for e in entries)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


class ReplayBackend(ModelBackend):
    """Looks replies up by request hash; a miss fails fast."""

    def __init__(self, fixture: Path) -> None:
        self.fixture = Path(fixture)
        self._replies = {e.hash: e.reply for e in load_fixture(self.fixture)}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._replies)

    def complete(self, request: ChatRequest) -> ChatReply:
        key = request_hash(request)
        with self._lock:
            reply = self._replies.get(key)
            if reply is None:
                self.misses += 1
                purpose = request.purpose or "untagged"
                msg = f"no recorded reply for request {key[:16]} ({purpose})"
                raise ReplayMiss(msg)
            self.hits += 1
        return reply


class RecordingBackend(ModelBackend):
    """
    Forwards to ``inner`` and freezes every distinct request into a fixture.

    A repeated request is answered from the fixture and bumps its hit count.
    The fixture file is rewritten after every change, so a crash mid-session
    still leaves a loadable file.
    """

    def __init__(self, inner: ModelBackend, fixture: Path) -> None:
        self.inner = inner
        self.fixture = Path(fixture)
        self._entries: dict[str, FixtureEntry] = {}
        if self.fixture.exists():
            self._entries = {e.hash: e for e in load_fixture(self.fixture)}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def hits(self, request: ChatRequest) -> int:
        entry = self._entries.get(request_hash(request))
        return entry.hits if entry else 0

    def complete(self, request: ChatRequest) -> ChatReply:
        key = request_hash(request)
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                entry.hits += 1
            else:
                entry = FixtureEntry(hash=key, reply=self.inner.complete(request))
                self._entries[key] = entry
            save_fixture(self._entries.values(), self.fixture)
        return entry.reply


def record_session(backend: ModelBackend, fixture: Path) -> RecordingBackend:
    fixture = Path(fixture)
    fixture.parent.mkdir(parents=True, exist_ok=True)
    return RecordingBackend(backend, fixture)


# --------------------------------------------------------------------- #
# Scripted                                                              #
# --------------------------------------------------------------------- #
ScriptReply = str | dict[str, Any]


class ScriptedBackend(ModelBackend):
    """
    Deterministic backend answering from per-purpose queues.

    A purpose such as ``codeact/s1`` is served from its own queue while it
    has replies left, then from the queue of its prefix (``codeact``).
    Dict replies are sent as sorted-key JSON text. Every request is kept in
    ``requests`` so tests can audit prompts.
    """

    def __init__(self, script: Mapping[str, Sequence[ScriptReply]]) -> None:
        self._queues: dict[str, deque[str]] = {
            purpose: deque(_reply_text(r) for r in replies)
            for purpose, replies in script.items()
        }
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: Path) -> ScriptedBackend:
        try:
            script = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            msg = f"script not found: {path}"
            raise ConfigError(msg) from None
        if not isinstance(script, dict):
            msg = f"script {path} must be a JSON object of purpose -> replies"
            raise ConfigError(msg)
        return cls(script)

    def remaining(self, purpose: str) -> int:
        queue = self._queues.get(purpose)
        return len(queue) if queue else 0

    def complete(self, request: ChatRequest) -> ChatReply:
        with self._lock:
            self.requests.append(request)
            for key in (request.purpose, request.purpose.split("/", 1)[0]):
                queue = self._queues.get(key)
                if queue:
                    return ChatReply(content=queue.popleft())
        msg = f"script has no reply left for purpose {request.purpose!r}"
        raise ScriptExhausted(msg)


def _reply_text(reply: ScriptReply) -> str:
    return reply if isinstance(reply, str) else json.dumps(reply, sort_keys=True)


# --------------------------------------------------------------------- #
# Structured completion                                                 #
# --------------------------------------------------------------------- #
def complete_json(
    model: ModelBackend,
    request: ChatRequest,
    schema: type[T],
    retries: int = defaults.PROTOCOL_RETRIES,
    check: Callable[[T], None] | None = None,
) -> T:
    """
    Complete ``request`` and validate the first JSON object of the reply.

    Invalid replies are answered with a re-prompt quoting the error, up to
    ``retries`` times. ``check`` adds semantic validation; it signals a bad
    document by raising :class:`ValueError`.

    Raises:
        ModelProtocolError: When no attempt yields a valid document.
    """
    error = ""
    for _ in range(retries + 1):
        reply = model.complete(request)
        try:
            document = schema.model_validate(extract_json_object(reply.content))
            if check is not None:
                check(document)
        except ValueError as exc:
            error = _short_error(exc)
            logger.info("invalid %s reply: %s", request.purpose or "model", error)
            request = request.extended(
                ChatMessage(role="assistant", content=reply.content),
                ChatMessage(role="user", content=JSON_REPROMPT.format(error=error)),
            )
        else:
            return document
    msg = f"{schema.__name__} reply still invalid after {retries} retries: {error}"
    raise ModelProtocolError(msg)


def _short_error(exc: ValueError) -> str:
    if isinstance(exc, ValidationError):
        return "; ".join(
            f"{'.'.join(map(str, e['loc'])) or 'document'}: {e['msg']}"
            for e in exc.errors()
        )
    return str(exc)
