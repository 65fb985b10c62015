"""Submit rendered prompts to an external scoring endpoint and collect raw responses.

Wire format: ``POST <base_url>`` with JSON ``{"utterance_id", "prompt"}`` plus
one of ``audio`` (base64 file bytes), ``audio_url`` or ``audio_path``; the
response text is read from a configurable dotted field path (``text``,
``choices.0.message.content``, ...). Audio is never decoded here.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import httpx

from .errors import ConfigError

log = logging.getLogger(__name__)

TRANSIENT_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1/assess"
    token_env: str = "APAKIT_API_TOKEN"
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5
    rps: float = 2.0
    max_in_flight: int = 4
    response_field: str = "text"

    def __post_init__(self):
        if not self.timeout > 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if not self.rps > 0:
            raise ConfigError(f"rps must be > 0, got {self.rps}")
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.backoff < 0:
            raise ConfigError(f"backoff must be >= 0, got {self.backoff}")
        if not self.response_field:
            raise ConfigError("response_field must not be empty")


@dataclass(frozen=True)
class PromptItem:
    utterance_id: str
    prompt: str
    audio_path: Optional[str] = None


@dataclass
class InferenceRecord:
    utterance_id: str
    prompt: str
    audio_path: Optional[str]
    response: Optional[str]
    error: Optional[str]
    latency_ms: float
    attempts: int
    dry_run: bool = False

    def __post_init__(self):
        if (self.response is None) == (self.error is None):
            raise ValueError("exactly one of response/error must be set")

    @property
    def ok(self) -> bool:
        return self.error is None and not self.dry_run

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class RateLimiter:
    """Spaces request starts at least ``1/rps`` seconds apart across threads."""

    def __init__(self, rps: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / rps
        self._clock = clock
        self._sleep = sleep
        self._next = None
        self._lock = threading.Lock()

    def acquire(self):
        with self._lock:
            now = self._clock()
            slot = now if self._next is None else max(now, self._next)
            self._next = slot + self.interval
        wait = slot - now
        if wait > 0:
            self._sleep(wait)


def extract_field(body, path: str):
    cur = body
    for part in path.split("."):
        if isinstance(cur, list):
            cur = cur[int(part)]
        else:
            cur = cur[part]
    return cur


def make_client(config: EndpointConfig, transport: Optional[httpx.BaseTransport] = None) -> httpx.Client:
    headers = {}
    token = os.environ.get(config.token_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return httpx.Client(timeout=config.timeout, headers=headers, transport=transport)


def _payload(item: PromptItem, audio_root: Optional[str] = None) -> dict:
    """Request body. Readable local audio is inlined as base64, URLs are sent as
    ``audio_url``, anything else goes through untouched as ``audio_path``."""
    body = {"utterance_id": item.utterance_id, "prompt": item.prompt}
    path = item.audio_path
    if path:
        local = Path(audio_root, path) if audio_root else Path(path)
        if path.startswith(("http://", "https://")):
            body["audio_url"] = path
        elif local.is_file():
            body["audio"] = base64.b64encode(local.read_bytes()).decode("ascii")
        else:
            body["audio_path"] = path
    return body


def _submit_one(item: PromptItem, client: httpx.Client, config: EndpointConfig, limiter: RateLimiter,
                sleep=time.sleep, audio_root: Optional[str] = None) -> InferenceRecord:
    t0 = time.monotonic()

    def record(response=None, error=None, attempts=0):
        return InferenceRecord(item.utterance_id, item.prompt, item.audio_path, response, error,
                               round((time.monotonic() - t0) * 1000.0, 3), attempts)

    try:
        payload = _payload(item, audio_root)
    except OSError as e:
        return record(error=f"audio unreadable: {e}")

    error = None
    for attempt in range(1, config.max_retries + 2):
        if attempt > 1:
            sleep(config.backoff * 2 ** (attempt - 2))
        limiter.acquire()
        try:
            resp = client.post(config.base_url, json=payload)
        except httpx.TransportError as e:
            error = f"transport: {type(e).__name__}: {e}"
            continue
        if resp.status_code in TRANSIENT_STATUS:
            error = f"HTTP {resp.status_code}"
            continue
        if resp.status_code >= 400:
            return record(error=f"HTTP {resp.status_code}", attempts=attempt)
        try:
            text = extract_field(resp.json(), config.response_field)
        except (ValueError, KeyError, IndexError, TypeError):
            return record(error=f"response lacks field {config.response_field!r}", attempts=attempt)
        if not isinstance(text, str):
            return record(error=f"field {config.response_field!r} is not a string", attempts=attempt)
        return record(response=text, attempts=attempt)
    return record(error=f"retries exhausted: {error}", attempts=config.max_retries + 1)


def _append(fh, rec: InferenceRecord):
    # one write per line so a crash never leaves a half record behind a good one
    fh.write(rec.to_json() + "\n")
    fh.flush()
    os.fsync(fh.fileno())


def submit_batch(items: Iterable[PromptItem], config: EndpointConfig, dry_run: bool = False,
                 record_path=None, transport: Optional[httpx.BaseTransport] = None,
                 sleep=time.sleep, audio_root: Optional[str] = None) -> Iterator[InferenceRecord]:
    """Yield one record per input, in input order.

    Transient failures (transport errors, 408/429/5xx) are retried with
    exponential backoff; a request that still fails becomes an error record.
    Records are appended to ``record_path`` as they are yielded.
    """
    items = list(items)
    fh = open(record_path, "a", encoding="utf-8") if record_path else None
    try:
        if dry_run:
            for it in items:
                rec = InferenceRecord(it.utterance_id, it.prompt, it.audio_path, "", None, 0.0, 0, dry_run=True)
                if fh:
                    _append(fh, rec)
                yield rec
            return
        limiter = RateLimiter(config.rps)
        with make_client(config, transport) as client, ThreadPoolExecutor(config.max_in_flight) as pool:
            futures = [pool.submit(_submit_one, it, client, config, limiter, sleep, audio_root) for it in items]
            for fut in futures:
                rec = fut.result()
                if rec.error:
                    log.warning("%s: %s", rec.utterance_id, rec.error)
                if fh:
                    _append(fh, rec)
                yield rec
    finally:
        if fh:
            fh.close()


def read_records(path) -> list[InferenceRecord]:
    """Read a record file, skipping (with a warning) lines that do not parse."""
    path = Path(path)
    if not path.is_file():
        return []
    out = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            if "_header" in d:
                continue
            out.append(InferenceRecord(**d))
        except (json.JSONDecodeError, TypeError, ValueError) as e:
            log.warning("%s:%d: skipping corrupt record (%s)", path, n, e)
    return out


def resume(record_path, items: Iterable[PromptItem], config: EndpointConfig, **kwargs) -> Iterator[InferenceRecord]:
    """Submit only the inputs lacking a successful record in ``record_path``."""
    done = {r.utterance_id for r in read_records(record_path) if r.ok}
    pending = [it for it in items if it.utterance_id not in done]
    log.info("resume: %d already done, %d to submit", len(done), len(pending))
    return submit_batch(pending, config, record_path=record_path, **kwargs)


def latest_responses(records: Iterable[InferenceRecord]) -> dict[str, InferenceRecord]:
    """Last record per utterance, preferring successful ones."""
    out: dict[str, InferenceRecord] = {}
    for r in records:
        prev = out.get(r.utterance_id)
        if prev is None or r.ok or not prev.ok:
            out[r.utterance_id] = r
    return out
