"""Unit tests for model_backend.py."""

from pathlib import Path

import httpx
import pytest
from pydantic import BaseModel

from nexus.errors import (
    ModelProtocolError,
    RateLimited,
    ReplayMiss,
    ScriptExhausted,
    TransportError,
)
from nexus.model_backend import (
    ChatMessage,
    ChatParams,
    ChatReply,
    ChatRequest,
    LiveBackend,
    ReplayBackend,
    ScriptedBackend,
    complete_json,
    load_fixture,
    record_session,
    request_hash,
)


def _request(user: str = "hi", purpose: str = "planner") -> ChatRequest:
    return ChatRequest.of("system prompt", user, purpose)


def _completion(content: str) -> dict:
    return {
        "choices": [{"message": {"content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 1},
    }


def _live(handler, retries: int = 2) -> tuple[LiveBackend, list[float]]:
    sleeps: list[float] = []
    client = httpx.Client(transport=httpx.MockTransport(handler))
    backend = LiveBackend(
        "http://model.test/v1/",
        "secret",
        retries=retries,
        backoff_s=0.5,
        client=client,
        sleep=sleeps.append,
    )
    return backend, sleeps


# --------------------------------------------------------------------- #
# Hashing                                                               #
# --------------------------------------------------------------------- #
def test_hash_ignores_purpose_and_sampling_params() -> None:
    base = _request()
    other = ChatRequest.of("system prompt", "hi", "critic", ChatParams(temperature=0.9))
    assert request_hash(base) == request_hash(other)


def test_hash_is_whitespace_exact_and_order_sensitive() -> None:
    assert request_hash(_request("hi")) != request_hash(_request("hi "))
    swapped = ChatRequest(
        messages=[
            ChatMessage(role="user", content="hi"),
            ChatMessage(role="system", content="system prompt"),
        ],
    )
    assert request_hash(swapped) != request_hash(_request("hi"))


def test_hash_depends_on_model_name() -> None:
    named = ChatRequest.of("system prompt", "hi", "", ChatParams(model_name="other"))
    assert request_hash(named) != request_hash(_request())


def test_empty_reply_needs_a_reason() -> None:
    with pytest.raises(ValueError, match="empty reply"):
        ChatReply(content="")
    assert ChatReply(content="", finish_reason="length").content == ""


# --------------------------------------------------------------------- #
# Live                                                                  #
# --------------------------------------------------------------------- #
def test_live_posts_openai_payload() -> None:
    seen: list[httpx.Request] = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(request)
        return httpx.Response(200, json=_completion("hello"))

    backend, sleeps = _live(handler)
    reply = backend.complete(_request())
    assert reply.content == "hello"
    assert reply.usage == {"prompt_tokens": 3, "completion_tokens": 1}
    assert str(seen[0].url) == "http://model.test/v1/chat/completions"
    assert seen[0].headers["Authorization"] == "Bearer secret"
    assert sleeps == []


def test_live_retries_server_errors_with_backoff() -> None:
    statuses = iter([503, 502, 200])

    def handler(_: httpx.Request) -> httpx.Response:
        status = next(statuses)
        return httpx.Response(status, json=_completion("ok") if status == 200 else {})

    backend, sleeps = _live(handler)
    assert backend.complete(_request()).content == "ok"
    assert sleeps == [0.5, 1.0]


def test_live_honours_retry_after() -> None:
    def handler(_: httpx.Request) -> httpx.Response:
        return httpx.Response(429, headers={"Retry-After": "7"})

    backend, sleeps = _live(handler, retries=1)
    with pytest.raises(RateLimited):
        backend.complete(_request())
    assert sleeps == [7.0]


def test_live_client_error_is_not_retried() -> None:
    calls = 0

    def handler(_: httpx.Request) -> httpx.Response:
        nonlocal calls
        calls += 1
        return httpx.Response(400, text="bad request")

    backend, _ = _live(handler)
    with pytest.raises(TransportError, match="400"):
        backend.complete(_request())
    assert calls == 1


def test_live_connection_errors_exhaust_retries() -> None:
    def handler(request: httpx.Request) -> httpx.Response:
        raise httpx.ConnectError("refused", request=request)

    backend, sleeps = _live(handler, retries=2)
    with pytest.raises(TransportError, match="ConnectError"):
        backend.complete(_request())
    assert len(sleeps) == 2


# --------------------------------------------------------------------- #
# Record / replay                                                       #
# --------------------------------------------------------------------- #
def test_record_then_replay(tmp_path: Path) -> None:
    fixture = tmp_path / "fixtures" / "session.jsonl"
    recorder = record_session(ScriptedBackend({"planner": ["one", "two"]}), fixture)
    assert recorder.complete(_request("a")).content == "one"
    assert recorder.complete(_request("b")).content == "two"
    # a repeated request is served from the fixture
    assert recorder.complete(_request("a")).content == "one"
    assert recorder.hits(_request("a")) == 2
    assert len(load_fixture(fixture)) == 2

    replay = ReplayBackend(fixture)
    assert replay.complete(_request("b")).content == "two"
    assert replay.complete(_request("a")).content == "one"
    with pytest.raises(ReplayMiss):
        replay.complete(_request("c"))
    assert (replay.hits, replay.misses) == (2, 1)


def test_recorded_fixture_is_byte_stable(tmp_path: Path) -> None:
    paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for path in paths:
        recorder = record_session(ScriptedBackend({"planner": ["x"]}), path)
        recorder.complete(_request())
    assert paths[0].read_bytes() == paths[1].read_bytes()


# --------------------------------------------------------------------- #
# Scripted                                                              #
# --------------------------------------------------------------------- #
def test_scripted_falls_back_to_purpose_prefix() -> None:
    backend = ScriptedBackend(
        {"codeact/s1": ["own"], "codeact": ["shared"], "intent": [{"b": 1, "a": 2}]},
    )
    assert backend.complete(_request(purpose="codeact/s1")).content == "own"
    assert backend.complete(_request(purpose="codeact/s1")).content == "shared"
    assert backend.complete(_request(purpose="intent")).content == '{"a": 2, "b": 1}'
    with pytest.raises(ScriptExhausted):
        backend.complete(_request(purpose="codeact/s2"))
    assert len(backend.requests) == 4


def test_script_exhaustion_is_a_replay_miss() -> None:
    assert issubclass(ScriptExhausted, ReplayMiss)


# --------------------------------------------------------------------- #
# Structured completion                                                 #
# --------------------------------------------------------------------- #
class _Doc(BaseModel):
    value: int


def test_complete_json_reprompts_until_valid() -> None:
    backend = ScriptedBackend(
        {"planner": ["no json at all", '{"value": "x"}', 'ok: {"value": 3}']},
    )
    doc = complete_json(backend, _request(), _Doc, retries=2)
    assert doc.value == 3
    last = backend.requests[-1]
    roles = [m.role for m in last.messages]
    assert roles == ["system", "user", "assistant", "user", "assistant", "user"]


def test_complete_json_gives_up() -> None:
    backend = ScriptedBackend({"planner": ["{}", "{}"]})
    with pytest.raises(ModelProtocolError):
        complete_json(backend, _request(), _Doc, retries=1)


def test_complete_json_semantic_check() -> None:
    def positive(doc: _Doc) -> None:
        if doc.value <= 0:
            msg = "value must be positive"
            raise ValueError(msg)

    backend = ScriptedBackend({"planner": ['{"value": -1}', '{"value": 5}']})
    doc = complete_json(backend, _request(), _Doc, retries=1, check=positive)
    assert doc.value == 5
    assert "value must be positive" in backend.requests[-1].messages[-1].content
