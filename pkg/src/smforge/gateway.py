"""Provider-agnostic chat-completion client with record/replay.

Two live adapters speak the OpenAI-style and Anthropic-style chat wire
formats behind one ``complete(request) -> response`` interface; model
identifiers are opaque strings. Every request carries an explicit
temperature and token cap (1500 by default). A recording wrapper appends
each call to a line-delimited transcript; a replay backend serves a
transcript back, matching requests by digest in call order, which makes
whole pipeline runs reproducible with zero network access.

Credentials come from ``SMFORGE_OPENAI_KEY`` / ``SMFORGE_ANTHROPIC_KEY``;
``SMFORGE_BASE_URL`` points both adapters at a proxy when set.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import httpx

DEFAULT_MAX_TOKENS = 1500
ENV_OPENAI_KEY = "SMFORGE_OPENAI_KEY"
ENV_ANTHROPIC_KEY = "SMFORGE_ANTHROPIC_KEY"
ENV_BASE_URL = "SMFORGE_BASE_URL"

#: Seconds slept before each retry (rate-limit and 5xx responses only).
RETRY_BACKOFF = (1.0, 4.0, 16.0)


class GatewayError(Exception):
    """Base for gateway failures; ``step`` is filled in by the caller."""

    step: Optional[str] = None

    def with_step(self, step: str) -> "GatewayError":
        self.step = step
        return self

    def __str__(self) -> str:
        base = super().__str__()
        return f"[step {self.step}] {base}" if self.step else base


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class GatewayTimeout(GatewayError):
    pass


class ReplayMiss(GatewayError):
    pass


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user" | "assistant"
    content: str


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class CompletionResponse:
    content: str
    finish: str  # "stop" | "length" | "error"
    usage: Usage = Usage()

    @property
    def truncated(self) -> bool:
        return self.finish == "length"


def request_digest(req: CompletionRequest) -> str:
    """Stable hash of (model, messages, temperature, max_tokens)."""
    payload = {
        "model": req.model,
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Transcripts


@dataclass
class TranscriptEntry:
    digest: str
    request: CompletionRequest
    response: CompletionResponse
    ms: int


@dataclass
class Transcript:
    entries: list[TranscriptEntry] = field(default_factory=list)
    strategy_id: str = ""
    scenario_id: str = ""


def _entry_to_json(entry: TranscriptEntry) -> str:
    record = {
        "digest": entry.digest,
        "request": {
            "model": entry.request.model,
            "messages": [{"role": m.role, "content": m.content} for m in entry.request.messages],
            "temperature": entry.request.temperature,
            "max_tokens": entry.request.max_tokens,
        },
        "response": {
            "content": entry.response.content,
            "finish": entry.response.finish,
            "usage": {
                "prompt_tokens": entry.response.usage.prompt_tokens,
                "completion_tokens": entry.response.usage.completion_tokens,
            },
        },
        "ms": entry.ms,
    }
    return json.dumps(record, sort_keys=True, ensure_ascii=True)


def _entry_from_json(line: str) -> TranscriptEntry:
    record = json.loads(line)
    req = record["request"]
    resp = record["response"]
    usage = resp.get("usage", {})
    return TranscriptEntry(
        digest=record["digest"],
        request=CompletionRequest(
            model=req["model"],
            messages=tuple(Message(m["role"], m["content"]) for m in req["messages"]),
            temperature=req["temperature"],
            max_tokens=req["max_tokens"],
        ),
        response=CompletionResponse(
            content=resp["content"],
            finish=resp["finish"],
            usage=Usage(
                prompt_tokens=usage.get("prompt_tokens", 0),
                completion_tokens=usage.get("completion_tokens", 0),
            ),
        ),
        ms=record["ms"],
    )


def load_transcript(path: str | Path, strategy_id: str = "", scenario_id: str = "") -> Transcript:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(_entry_from_json(line))
    return Transcript(entries=entries, strategy_id=strategy_id, scenario_id=scenario_id)


# ---------------------------------------------------------------------------
# Backends


class Backend(Protocol):
    def complete(self, req: CompletionRequest) -> CompletionResponse: ...


class _RateGate:
    """Minimum-interval gate shared by the calls of one backend instance."""

    def __init__(self, min_interval: float):
        self.min_interval = min_interval
        self._lock = threading.Lock()
        self._last = 0.0

    def wait(self, sleeper: Callable[[float], None]) -> None:
        if self.min_interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._last + self.min_interval - now
            self._last = max(now, self._last + self.min_interval)
        if delay > 0:
            sleeper(delay)


class _HttpBackend:
    """Shared retry/timeout/auth plumbing for the live adapters."""

    def __init__(
        self,
        api_key: Optional[str],
        base_url: str,
        client: Optional[httpx.Client] = None,
        sleeper: Callable[[float], None] = time.sleep,
        timeout: float = 60.0,
        min_interval: float = 0.0,
    ):
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.client = client or httpx.Client()
        self.sleeper = sleeper
        self.timeout = timeout
        self._gate = _RateGate(min_interval)

    def _post(self, url: str, headers: dict, payload: dict) -> dict:
        if not self.api_key:
            raise AuthError("no API key configured")
        last_status = None
        for attempt in range(len(RETRY_BACKOFF) + 1):
            if attempt > 0:
                self.sleeper(RETRY_BACKOFF[attempt - 1])
            self._gate.wait(self.sleeper)
            try:
                resp = self.client.post(url, headers=headers, json=payload, timeout=self.timeout)
            except httpx.TimeoutException as exc:
                raise GatewayTimeout(f"request timed out after {self.timeout}s") from exc
            if resp.status_code in (401, 403):
                raise AuthError(f"authentication rejected (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_status = resp.status_code
                continue
            resp.raise_for_status()
            return resp.json()
        if last_status == 429:
            raise RateLimited("rate limited after retries exhausted")
        raise GatewayError(f"server error after retries exhausted (HTTP {last_status})")


class OpenAIChatBackend(_HttpBackend):
    """OpenAI-style ``/v1/chat/completions`` wire format."""

    def __init__(self, api_key: Optional[str] = None, base_url: Optional[str] = None, **kwargs):
        super().__init__(
            api_key=api_key or os.environ.get(ENV_OPENAI_KEY),
            base_url=base_url or os.environ.get(ENV_BASE_URL) or "https://api.openai.com",
            **kwargs,
        )

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        payload = {
            "model": req.model,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        data = self._post(f"{self.base_url}/v1/chat/completions", headers, payload)
        choice = data["choices"][0]
        finish = {"stop": "stop", "length": "length"}.get(choice.get("finish_reason"), "error")
        usage = data.get("usage", {})
        return CompletionResponse(
            content=choice["message"]["content"] or "",
            finish=finish,
            usage=Usage(
                prompt_tokens=usage.get("prompt_tokens", 0),
                completion_tokens=usage.get("completion_tokens", 0),
            ),
        )


class AnthropicChatBackend(_HttpBackend):
    """Anthropic-style ``/v1/messages`` wire format."""

    def __init__(self, api_key: Optional[str] = None, base_url: Optional[str] = None, **kwargs):
        super().__init__(
            api_key=api_key or os.environ.get(ENV_ANTHROPIC_KEY),
            base_url=base_url or os.environ.get(ENV_BASE_URL) or "https://api.anthropic.com",
            **kwargs,
        )

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        system = "\n\n".join(m.content for m in req.messages if m.role == "system")
        payload = {
            "model": req.model,
            "messages": [
                {"role": m.role, "content": m.content}
                for m in req.messages
                if m.role != "system"
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if system:
            payload["system"] = system
        headers = {"x-api-key": self.api_key or "", "anthropic-version": "2023-06-01"}
        data = self._post(f"{self.base_url}/v1/messages", headers, payload)
        content = "".join(
            block.get("text", "") for block in data.get("content", []) if block.get("type") == "text"
        )
        finish = {"end_turn": "stop", "stop_sequence": "stop", "max_tokens": "length"}.get(
            data.get("stop_reason"), "error"
        )
        usage = data.get("usage", {})
        return CompletionResponse(
            content=content,
            finish=finish,
            usage=Usage(
                prompt_tokens=usage.get("input_tokens", 0),
                completion_tokens=usage.get("output_tokens", 0),
            ),
        )


class ReplayBackend:
    """Serves a recorded transcript; requests must arrive in recorded order
    with matching digests. Raises :class:`ReplayMiss` otherwise."""

    def __init__(self, transcript: Transcript):
        self.transcript = transcript
        self._pos = 0
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        digest = request_digest(req)
        with self._lock:
            if self._pos >= len(self.transcript.entries):
                raise ReplayMiss(f"transcript exhausted after {self._pos} calls")
            entry = self.transcript.entries[self._pos]
            if entry.digest != digest:
                raise ReplayMiss(
                    f"request digest {digest[:12]} does not match recorded "
                    f"{entry.digest[:12]} at entry {self._pos}"
                )
            self._pos += 1
        return entry.response


class RecordingBackend:
    """Pass-through wrapper appending every call to a transcript file.

    Each completed call is written and flushed immediately, one JSON record
    per line. ``expected_max_tokens`` is the recording assertion that every
    outbound request honors the configured cap; pass None to disable.
    """

    def __init__(
        self,
        inner: Backend,
        sink: str | Path,
        strategy_id: str = "",
        scenario_id: str = "",
        expected_max_tokens: Optional[int] = DEFAULT_MAX_TOKENS,
    ):
        self.inner = inner
        self.sink = Path(sink)
        self.sink.parent.mkdir(parents=True, exist_ok=True)
        self.expected_max_tokens = expected_max_tokens
        self.transcript = Transcript(strategy_id=strategy_id, scenario_id=scenario_id)
        self._fh = open(self.sink, "w", encoding="utf-8")
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        if self.expected_max_tokens is not None and req.max_tokens != self.expected_max_tokens:
            raise ValueError(
                f"recorded request uses max_tokens={req.max_tokens}, "
                f"expected {self.expected_max_tokens}"
            )
        start = time.monotonic()
        response = self.inner.complete(req)
        ms = int((time.monotonic() - start) * 1000)
        entry = TranscriptEntry(digest=request_digest(req), request=req, response=response, ms=ms)
        with self._lock:
            self.transcript.entries.append(entry)
            self._fh.write(_entry_to_json(entry) + "\n")
            self._fh.flush()
        return entry.response

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RecordingBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def record_wrap(
    backend: Backend,
    sink: str | Path,
    strategy_id: str = "",
    scenario_id: str = "",
    expected_max_tokens: Optional[int] = DEFAULT_MAX_TOKENS,
) -> RecordingBackend:
    """Wrap ``backend`` so every call is appended to the transcript at ``sink``."""
    return RecordingBackend(
        backend,
        sink,
        strategy_id=strategy_id,
        scenario_id=scenario_id,
        expected_max_tokens=expected_max_tokens,
    )


# ---------------------------------------------------------------------------
# Sampling profiles


@dataclass(frozen=True)
class SamplingProfiles:
    deterministic: float = 0.01
    creative: float = 0.5


def profile(kind: str, profiles: Optional[SamplingProfiles] = None) -> float:
    """Temperature for a named sampling profile (config-overridable)."""
    profiles = profiles or SamplingProfiles()
    if kind == "deterministic":
        return profiles.deterministic
    if kind == "creative":
        return profiles.creative
    raise ValueError(f"unknown sampling profile {kind!r}")
