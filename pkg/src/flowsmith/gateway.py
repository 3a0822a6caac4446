"""Single choke point for model traffic.

Every agent and every Prompt-node execution goes through
:class:`LLMGateway`, which handles provider transport, retries, rate
limiting, and the record/replay cassette store that makes the whole
system deterministic under test.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable

import jsonschema

MODE_LIVE = "live"
MODE_RECORD = "record"
MODE_REPLAY = "replay"
MODE_MOCK = "mock"

MODES = (MODE_LIVE, MODE_RECORD, MODE_REPLAY, MODE_MOCK)


class GatewayError(Exception):
    pass


class ProviderError(GatewayError):
    def __init__(self, status: int, body: str) -> None:
        super().__init__(f"provider returned {status}: {body[:200]}")
        self.status = status
        self.body = body


class GatewayTimeout(GatewayError):
    pass


class ReplayMiss(GatewayError):
    def __init__(self, key: str) -> None:
        super().__init__(f"no cassette entry for request key {key}")
        self.key = key


class ScriptExhausted(GatewayError):
    pass


class StructuredOutputFailure(GatewayError):
    """Schema-constrained call kept failing; carries every raw attempt."""

    def __init__(self, message: str, raw_attempts: list[str]) -> None:
        super().__init__(message)
        self.raw_attempts = raw_attempts


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str


@dataclass(frozen=True)
class ChatRequest:
    provider: str
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    response_schema: dict[str, Any] | None = None

    def with_messages(self, messages: Iterable[ChatMessage]) -> "ChatRequest":
        return replace(self, messages=tuple(messages))


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    input_tokens: int = 0
    output_tokens: int = 0
    latency_ms: int = 0


def request_digest(request: ChatRequest) -> str:
    """Digest over the request's semantic fields only.

    Two requests with identical provider, model, messages, temperature,
    and response schema share a key regardless of how they were built.
    """
    payload = {
        "provider": request.provider,
        "model": request.model,
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
        "response_schema": request.response_schema,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# cassette store


@dataclass(frozen=True)
class CassetteEntry:
    key: str
    response: ChatResponse
    recorded_at: str


def _entry_to_doc(entry: CassetteEntry) -> dict[str, Any]:
    return {
        "key": entry.key,
        "recorded_at": entry.recorded_at,
        "response": {
            "text": entry.response.text,
            "finish_reason": entry.response.finish_reason,
            "input_tokens": entry.response.input_tokens,
            "output_tokens": entry.response.output_tokens,
            "latency_ms": entry.response.latency_ms,
        },
    }


def _entry_from_doc(doc: dict[str, Any]) -> CassetteEntry:
    r = doc["response"]
    return CassetteEntry(
        key=doc["key"],
        recorded_at=doc.get("recorded_at", ""),
        response=ChatResponse(
            text=r["text"],
            finish_reason=r.get("finish_reason", "stop"),
            input_tokens=r.get("input_tokens", 0),
            output_tokens=r.get("output_tokens", 0),
            latency_ms=r.get("latency_ms", 0),
        ),
    )


class CassetteStore:
    """Human-readable JSON cassettes: one file per session, entries keyed by digest."""

    def __init__(self, directory: str | Path, session: str = "recorded") -> None:
        self.directory = Path(directory)
        self.session = session
        self._lock = threading.Lock()
        self._entries: dict[str, CassetteEntry] = {}
        self._load()

    def _load(self) -> None:
        if not self.directory.is_dir():
            return
        for path in sorted(self.directory.glob("*.json")):
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            for entry_doc in doc.get("entries", []):
                entry = _entry_from_doc(entry_doc)
                self._entries[entry.key] = entry

    def get(self, key: str) -> CassetteEntry | None:
        with self._lock:
            return self._entries.get(key)

    def append(self, entry: CassetteEntry) -> None:
        with self._lock:
            self._entries[entry.key] = entry
            self.directory.mkdir(parents=True, exist_ok=True)
            path = self.directory / f"{self.session}.json"
            if path.exists():
                with open(path, "r", encoding="utf-8") as fh:
                    doc = json.load(fh)
            else:
                doc = {"entries": []}
            doc["entries"] = [e for e in doc["entries"] if e["key"] != entry.key]
            doc["entries"].append(_entry_to_doc(entry))
            doc["entries"].sort(key=lambda e: e["key"])
            tmp = path.with_suffix(".json.tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True, ensure_ascii=False)
                fh.write("\n")
            os.replace(tmp, path)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


# ---------------------------------------------------------------------------
# transports


class Transport:
    """Anything that can answer a ChatRequest."""

    def send(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError


@dataclass
class ProviderProfile:
    name: str
    provider: str
    model: str
    base_url: str = ""
    api_key_env: str = ""
    temperature: float | None = None

    def resolve_api_key(self) -> str | None:
        env = self.api_key_env or f"FLOWSMITH_{self.name.upper()}_API_KEY"
        return os.environ.get(env)


class HttpTransport(Transport):
    """Chat-completion style HTTP provider, one base URL per provider id."""

    def __init__(self, profiles: dict[str, ProviderProfile], timeout_s: float = 60.0) -> None:
        self.timeout_s = timeout_s
        self._by_provider: dict[str, ProviderProfile] = {}
        for profile in profiles.values():
            self._by_provider.setdefault(profile.provider, profile)

    def send(self, request: ChatRequest) -> ChatResponse:
        import requests

        profile = self._by_provider.get(request.provider)
        if profile is None or not profile.base_url:
            raise ProviderError(0, f"no base_url configured for provider '{request.provider}'")
        body: dict[str, Any] = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.response_schema is not None:
            body["response_format"] = {
                "type": "json_schema",
                "json_schema": {"name": "response", "schema": request.response_schema, "strict": True},
            }
        headers = {"Content-Type": "application/json"}
        api_key = profile.resolve_api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        started = time.monotonic()
        try:
            resp = requests.post(
                profile.base_url.rstrip("/") + "/chat/completions",
                json=body,
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.Timeout as exc:
            raise GatewayTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise ProviderError(0, str(exc)) from exc
        latency_ms = int((time.monotonic() - started) * 1000)
        if resp.status_code >= 400:
            raise ProviderError(resp.status_code, resp.text)
        doc = resp.json()
        choice = doc["choices"][0]
        usage = doc.get("usage", {})
        return ChatResponse(
            text=choice["message"]["content"] or "",
            finish_reason=choice.get("finish_reason", "stop"),
            input_tokens=usage.get("prompt_tokens", 0),
            output_tokens=usage.get("completion_tokens", 0),
            latency_ms=latency_ms,
        )


ScriptEntry = Any  # str | dict | Exception | Callable[[ChatRequest], str]


class ScriptedTransport(Transport):
    """Answers from a test script queue, in order.

    Entries may be plain text, a dict (serialized as JSON), an exception
    instance (raised), or a callable on the request. When the queue runs
    dry the optional ``default`` callable answers instead.
    """

    def __init__(
        self,
        entries: Iterable[ScriptEntry] = (),
        default: Callable[[ChatRequest], str] | None = None,
    ) -> None:
        self._queue: deque[ScriptEntry] = deque(entries)
        self._default = default
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    def push(self, *entries: ScriptEntry) -> None:
        self._queue.extend(entries)

    def send(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
            if self._queue:
                entry = self._queue.popleft()
            elif self._default is not None:
                entry = self._default
            else:
                raise ScriptExhausted("mock script queue is empty")
        if isinstance(entry, Exception):
            raise entry
        if callable(entry):
            entry = entry(request)
        if isinstance(entry, (dict, list)):
            entry = json.dumps(entry, ensure_ascii=False)
        text = str(entry)
        return ChatResponse(text=text, output_tokens=max(1, len(text) // 4))


class RoutedTransport(Transport):
    """Scenario transport: first matching (predicate, responder) rule answers.

    Used to author cassette fixtures, where call order is not guaranteed.
    """

    def __init__(
        self,
        rules: Iterable[tuple[Callable[[ChatRequest], bool], ScriptEntry]],
        fallback: ScriptEntry | None = None,
    ) -> None:
        self._rules = list(rules)
        self._fallback = fallback
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    def send(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
        entry: ScriptEntry | None = None
        for predicate, candidate in self._rules:
            if predicate(request):
                entry = candidate
                break
        if entry is None:
            entry = self._fallback
        if entry is None:
            raise ScriptExhausted("no scenario rule matched the request")
        if isinstance(entry, Exception):
            raise entry
        if callable(entry):
            entry = entry(request)
        if isinstance(entry, (dict, list)):
            entry = json.dumps(entry, ensure_ascii=False)
        text = str(entry)
        return ChatResponse(text=text, output_tokens=max(1, len(text) // 4))


# ---------------------------------------------------------------------------
# rate limiting


class RateLimiter:
    """Global in-flight cap plus a per-provider requests-per-minute ceiling."""

    def __init__(self, max_in_flight: int = 8, per_provider_rpm: int = 60) -> None:
        self._semaphore = threading.BoundedSemaphore(max_in_flight)
        self._rpm = per_provider_rpm
        self._windows: dict[str, deque[float]] = {}
        self._lock = threading.Lock()

    def __enter__(self) -> "RateLimiter":
        self._semaphore.acquire()
        return self

    def __exit__(self, *exc: Any) -> None:
        self._semaphore.release()

    def wait_for_slot(self, provider: str) -> None:
        while True:
            with self._lock:
                window = self._windows.setdefault(provider, deque())
                now = time.monotonic()
                while window and now - window[0] > 60.0:
                    window.popleft()
                if len(window) < self._rpm:
                    window.append(now)
                    return
                sleep_for = 60.0 - (now - window[0])
            time.sleep(max(sleep_for, 0.01))


# ---------------------------------------------------------------------------
# the gateway


class LLMGateway:
    """Thread-safe facade over transport + cassettes + retry policy."""

    def __init__(
        self,
        mode: str = MODE_MOCK,
        transport: Transport | None = None,
        cassettes: CassetteStore | None = None,
        retry_backoffs: tuple[float, ...] = (0.5, 1.0, 2.0),
        structured_attempts: int = 2,
        max_in_flight: int = 8,
        per_provider_rpm: int = 60,
        clock: Callable[[], str] | None = None,
    ) -> None:
        if mode not in MODES:
            raise ValueError(f"unknown gateway mode '{mode}'")
        if mode in (MODE_LIVE, MODE_RECORD) and transport is None:
            raise ValueError(f"{mode} mode needs a transport")
        if mode in (MODE_RECORD, MODE_REPLAY) and cassettes is None:
            raise ValueError(f"{mode} mode needs a cassette store")
        if mode == MODE_MOCK and transport is None:
            transport = ScriptedTransport()
        self.mode = mode
        self.transport = transport
        self.cassettes = cassettes
        self.retry_backoffs = retry_backoffs
        self.structured_attempts = structured_attempts
        self._limiter = RateLimiter(max_in_flight, per_provider_rpm)
        self._clock = clock or (lambda: time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
        self._counter_lock = threading.Lock()
        self.transport_calls = 0
        self.replay_hits = 0

    def _send_with_retries(self, request: ChatRequest) -> ChatResponse:
        assert self.transport is not None
        attempts = len(self.retry_backoffs) + 1
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                with self._counter_lock:
                    self.transport_calls += 1
                if self.mode in (MODE_LIVE, MODE_RECORD) and isinstance(self.transport, HttpTransport):
                    self._limiter.wait_for_slot(request.provider)
                with self._limiter:
                    return self.transport.send(request)
            except (GatewayTimeout, ProviderError) as exc:
                retryable = isinstance(exc, GatewayTimeout) or exc.status in (429,) or exc.status >= 500
                last = exc
                if not retryable or attempt == attempts - 1:
                    raise
                time.sleep(self.retry_backoffs[attempt])
        raise last if last else GatewayError("unreachable")

    def complete(self, request: ChatRequest, mode: str | None = None) -> ChatResponse:
        """Answer one chat request according to the gateway mode."""
        if not request.messages:
            raise ValueError("request has no messages")
        mode = mode or self.mode
        if mode == MODE_REPLAY:
            assert self.cassettes is not None
            key = request_digest(request)
            entry = self.cassettes.get(key)
            if entry is None:
                raise ReplayMiss(key)
            with self._counter_lock:
                self.replay_hits += 1
            return entry.response
        response = self._send_with_retries(request)
        if mode == MODE_RECORD:
            assert self.cassettes is not None
            self.cassettes.append(
                CassetteEntry(key=request_digest(request), response=response, recorded_at=self._clock())
            )
        return response

    def complete_structured(
        self,
        request: ChatRequest,
        schema: dict[str, Any],
        max_attempts: int | None = None,
    ) -> "StructuredCompletion":
        """Schema-constrained completion with corrective retries.

        On a parse or validation failure the raw reply and the validation
        error are appended to the conversation, and the request is retried
        up to ``max_attempts`` total attempts.
        """
        if schema.get("type") != "object" or schema.get("additionalProperties", True) is not False:
            raise ValueError("schema must be a closed object schema")
        max_attempts = max_attempts or self.structured_attempts
        attempt_request = replace(request, response_schema=schema)
        raw_attempts: list[str] = []
        for attempt in range(1, max_attempts + 1):
            response = self.complete(attempt_request)
            raw_attempts.append(response.text)
            try:
                value = parse_json_block(response.text)
                jsonschema.validate(value, schema)
            except (ValueError, jsonschema.ValidationError) as exc:
                if attempt == max_attempts:
                    raise StructuredOutputFailure(
                        f"no schema-valid reply after {max_attempts} attempts: {exc}",
                        raw_attempts,
                    ) from exc
                correction = (
                    "The previous reply was not valid. "
                    f"Validation error: {exc}. "
                    "Reply again with ONLY a JSON object matching the schema."
                )
                attempt_request = attempt_request.with_messages(
                    list(attempt_request.messages)
                    + [
                        ChatMessage(role="assistant", content=response.text),
                        ChatMessage(role="user", content=correction),
                    ]
                )
                continue
            return StructuredCompletion(value=value, attempts=attempt, raw_attempts=raw_attempts)
        raise StructuredOutputFailure("unreachable", raw_attempts)


@dataclass(frozen=True)
class StructuredCompletion:
    value: dict[str, Any]
    attempts: int
    raw_attempts: list[str] = field(default_factory=list)


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_json_block(text: str) -> Any:
    """Parse a JSON object out of a model reply, tolerating code fences."""
    candidate = text.strip()
    fenced = _FENCE_RE.search(candidate)
    if fenced:
        candidate = fenced.group(1).strip()
    if not candidate.startswith(("{", "[")):
        start = candidate.find("{")
        end = candidate.rfind("}")
        if start >= 0 and end > start:
            candidate = candidate[start : end + 1]
    try:
        return json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise ValueError(f"reply is not JSON: {exc}") from exc


def closed_object_schema(
    properties: dict[str, Any], required: list[str] | None = None
) -> dict[str, Any]:
    """Build the closed object schemas agents are required to use."""
    return {
        "type": "object",
        "properties": properties,
        "required": required if required is not None else list(properties),
        "additionalProperties": False,
    }
