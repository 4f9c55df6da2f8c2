"""Chat-completion providers: live HTTP, record/replay, and a scripted stand-in."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Protocol

import httpx
import yaml

log = logging.getLogger(__name__)

ENV_API_KEY = "LERO_API_KEY"
ENV_ENDPOINT = "LERO_API_BASE"
ENV_MODEL = "LERO_MODEL"
DEFAULT_ENDPOINT = "https://api.openai.com/v1"
DEFAULT_MODEL = "o3-mini"
MAX_ATTEMPTS = 5
EPOCH = "1970-01-01T00:00:00+00:00"
REDACTED = "[REDACTED]"
SENSITIVE_HEADERS = {"authorization", "api-key", "x-api-key", "proxy-authorization", "cookie"}


class LlmError(RuntimeError):
    pass


class LlmUnavailable(LlmError):
    """The provider could not produce an answer after all retries."""


class RateLimited(LlmError):
    pass


class ReplayMiss(LlmError):
    def __init__(self, fingerprint: str, request_id: str = ""):
        self.fingerprint = fingerprint
        super().__init__(f"no recorded entry for fingerprint {fingerprint} (request {request_id or '?'})")


class NoCodeBlock(ValueError):
    pass


@dataclass(frozen=True)
class LlmRequest:
    system: str
    user: str
    n_completions: int = 1
    temperature: float = 1.0
    model_name: str = DEFAULT_MODEL
    request_id: str = ""

    def __post_init__(self) -> None:
        if self.n_completions < 1:
            raise ValueError("n_completions must be at least 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.system, self.user, self.n_completions)


@dataclass
class LlmResponse:
    completions: list[str]
    provider: str
    latency: float = 0.0
    usage: dict | None = None
    timestamp: str = EPOCH


def fingerprint(system: str, user: str, n: int) -> str:
    """Stable across processes: sha256 of the canonical JSON of (system, user, n)."""
    payload = json.dumps([system, user, int(n)], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Provider(Protocol):
    name: str

    def generate(self, request: LlmRequest) -> LlmResponse: ...


# ---------------------------------------------------------------------------
# Code extraction and logging
# ---------------------------------------------------------------------------

_FENCE = re.compile(r"```(?:[\w+.-]*[ \t]*\n)?(.*?)```", re.DOTALL)


def extract_code(completion: str) -> str:
    """Body of the first fenced block; prose around it is dropped."""
    m = _FENCE.search(completion)
    if m is None:
        raise NoCodeBlock("completion has no fenced code block")
    return m.group(1).strip("\n")


def _scrub(text: str, secrets: Iterable[str]) -> str:
    for s in secrets:
        if s:
            text = text.replace(s, REDACTED)
    return text


def redact_and_log(
    request: LlmRequest,
    response: LlmResponse,
    log_path: str | Path | None = None,
    *,
    headers: dict[str, str] | None = None,
    secrets: Iterable[str] = (),
    lock: threading.Lock | None = None,
) -> dict:
    """One JSONL record for a prompt/response pair with credentials stripped.

    Sensitive header values are replaced, and any literal secret string is
    scrubbed from every text field. Appends to ``log_path`` when given.
    """
    secrets = [s for s in secrets if s]
    if headers:
        secrets += [v for k, v in headers.items() if k.lower() in SENSITIVE_HEADERS and v]
    req = {k: (_scrub(v, secrets) if isinstance(v, str) else v) for k, v in asdict(request).items()}
    record = {
        "fingerprint": request.fingerprint,
        "request": req,
        "completions": [_scrub(c, secrets) for c in response.completions],
        "timestamp": response.timestamp,
    }
    if headers:
        record["headers"] = {
            k: (REDACTED if k.lower() in SENSITIVE_HEADERS else _scrub(v, secrets)) for k, v in sorted(headers.items())
        }
    if log_path is not None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n"
        if lock is None:
            _append(log_path, line)
        else:
            with lock:
                _append(log_path, line)
    return record


def _append(path: str | Path, line: str) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line)


# ---------------------------------------------------------------------------
# Recordings and replay
# ---------------------------------------------------------------------------


@dataclass
class Recording:
    entries: list[dict] = field(default_factory=list)

    @classmethod
    def load(cls, path: str | Path) -> "Recording":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                entry = json.loads(line)
                for key in ("fingerprint", "completions"):
                    if key not in entry:
                        raise ValueError(f"{path}:{lineno}: recording entry lacks {key!r}")
                entries.append(entry)
        return cls(entries)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e, sort_keys=True, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self.entries)


class ReplayProvider:
    """Serves recorded completions by fingerprint, in recorded order.

    Repeated identical requests consume successive matching entries; a
    request with no unconsumed match raises :class:`ReplayMiss`.
    """

    name = "replay"

    def __init__(self, recording: Recording | str | Path):
        self.recording = recording if isinstance(recording, Recording) else Recording.load(recording)
        self._queues: dict[str, list[dict]] = {}
        for e in self.recording.entries:
            self._queues.setdefault(e["fingerprint"], []).append(e)
        self._lock = threading.Lock()

    def generate(self, request: LlmRequest) -> LlmResponse:
        fp = request.fingerprint
        with self._lock:
            queue = self._queues.get(fp)
            if not queue:
                raise ReplayMiss(fp, request.request_id)
            entry = queue.pop(0)
        return LlmResponse(list(entry["completions"]), "replay", 0.0, None, entry.get("timestamp", EPOCH))

    def skip(self, fingerprint: str, request_id: str = "") -> None:
        """Mark the next entry for ``fingerprint`` as consumed (used on resume)."""
        with self._lock:
            queue = self._queues.get(fingerprint)
            if not queue:
                raise ReplayMiss(fingerprint, request_id)
            queue.pop(0)


# ---------------------------------------------------------------------------
# Live HTTP provider
# ---------------------------------------------------------------------------


class LiveProvider:
    """Chat-completion JSON over HTTP; endpoint, key and model come from the environment."""

    name = "live"

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        *,
        client: httpx.Client | None = None,
        max_attempts: int = MAX_ATTEMPTS,
        backoff: float = 1.0,
        timeout: float = 120.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = (endpoint or os.environ.get(ENV_ENDPOINT) or DEFAULT_ENDPOINT).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL)
        self.client = client or httpx.Client(timeout=timeout)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep

    @property
    def headers(self) -> dict[str, str]:
        h = {"Content-Type": "application/json"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def payload(self, request: LlmRequest) -> dict:
        return {
            "model": self.model or request.model_name,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "n": request.n_completions,
            "temperature": request.temperature,
        }

    def _post(self, request: LlmRequest) -> httpx.Response:
        resp = self.client.post(f"{self.endpoint}/chat/completions", json=self.payload(request), headers=self.headers)
        if resp.status_code == 429:
            raise RateLimited(f"rate limited (HTTP 429) on {request.request_id}")
        if resp.status_code >= 500:
            raise RateLimited(f"server error HTTP {resp.status_code} on {request.request_id}")
        if resp.status_code >= 400:
            raise LlmUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return resp

    def generate(self, request: LlmRequest) -> LlmResponse:
        t0 = time.perf_counter()
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._post(request)
                break
            except (RateLimited, httpx.TransportError) as exc:
                last = exc
                if attempt + 1 < self.max_attempts:
                    delay = self.backoff * 2**attempt
                    log.warning("attempt %d for %s failed (%s); retrying in %.1fs", attempt + 1, request.request_id, exc, delay)
                    self.sleep(delay)
        else:
            raise LlmUnavailable(f"gave up after {self.max_attempts} attempts: {last}") from last
        body = resp.json()
        completions = [c["message"]["content"] or "" for c in body.get("choices", [])]
        if len(completions) != request.n_completions:
            raise LlmUnavailable(f"asked for {request.n_completions} completions, got {len(completions)}")
        return LlmResponse(
            completions,
            "live",
            time.perf_counter() - t0,
            body.get("usage"),
            datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )


# ---------------------------------------------------------------------------
# Scripted provider (deterministic, used to author recordings)
# ---------------------------------------------------------------------------


class ScriptedProvider:
    """Answers from a script of canned completions, queued per request kind.

    The script maps a kind (the ``hrf`` / ``oef`` token in the request id)
    to a list of calls, each a list of completion strings. A call asking
    for ``n`` completions takes the next queued call, which must hold at
    least ``n`` strings; a kind that runs dry raises :class:`LlmUnavailable`.
    """

    name = "scripted"

    def __init__(self, script: dict[str, list[list[str]]], timestamp: str = EPOCH):
        self.queues = {k: [list(c) for c in v] for k, v in script.items()}
        self.timestamp = timestamp
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path) -> "ScriptedProvider":
        data = yaml.safe_load(Path(path).read_text())
        return cls(data.get("calls", data), data.get("timestamp", EPOCH) if "calls" in data else EPOCH)

    @staticmethod
    def kind_of(request: LlmRequest) -> str:
        parts = request.request_id.split("-")
        return parts[1] if len(parts) > 1 else request.request_id

    def generate(self, request: LlmRequest) -> LlmResponse:
        kind = self.kind_of(request)
        with self._lock:
            queue = self.queues.get(kind)
            if not queue:
                raise LlmUnavailable(f"script has no more {kind!r} calls")
            call = queue.pop(0)
        if len(call) < request.n_completions:
            raise LlmUnavailable(f"scripted call holds {len(call)} completions, {request.n_completions} requested")
        return LlmResponse(call[: request.n_completions], "scripted", 0.0, None, self.timestamp)

    def skip(self, fingerprint: str, request_id: str = "") -> None:
        kind = self.kind_of(LlmRequest("", "", request_id=request_id))
        with self._lock:
            if self.queues.get(kind):
                self.queues[kind].pop(0)


class RecordingProvider:
    """Wraps a provider and appends every exchange to a JSONL log."""

    def __init__(self, inner: Provider, log_path: str | Path | None):
        self.inner = inner
        self.log_path = log_path
        self.name = inner.name
        self._lock = threading.Lock()
        self.count = 0

    def generate(self, request: LlmRequest) -> LlmResponse:
        response = self.inner.generate(request)
        secrets = [getattr(self.inner, "api_key", "")]
        headers = getattr(self.inner, "headers", None) if isinstance(self.inner, LiveProvider) else None
        redact_and_log(request, response, self.log_path, headers=headers, secrets=secrets, lock=self._lock)
        self.count += 1
        return response


def make_provider(spec: str) -> Provider:
    """``live``, ``replay:PATH`` or ``scripted:PATH``."""
    if spec == "live":
        return LiveProvider()
    kind, _, path = spec.partition(":")
    if kind == "replay" and path:
        return ReplayProvider(path)
    if kind == "scripted" and path:
        return ScriptedProvider.load(path)
    raise ValueError(f"unknown provider {spec!r}; expected live, replay:PATH or scripted:PATH")
