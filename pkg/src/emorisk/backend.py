"""Text-generation backends and a bounded-concurrency batch driver.

Two implementations share the retry loop in :class:`Backend`: an HTTP client
for a local model server speaking the ``/api/generate`` convention, and a
deterministic in-process mock used by the test suite and for dry runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Sequence, TypeVar

import httpx

from .core import EMOTIONS, EmotionLabelSet, compute_severity
from .prompt import PromptVariant, RenderedPrompt, embedded_post

log = logging.getLogger(__name__)

BASE_URL_ENV = "EMORISK_BASE_URL"

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class BackendConfig:
    base_url: str = "http://localhost:11434"
    model_name: str = "gemma3:27b"
    temperature: float = 0.0
    request_timeout: float = 120.0
    max_retries: int = 3
    max_in_flight: int = 4
    endpoint: str = "/api/generate"
    response_field: str = "response"
    backoff_initial: float = 0.5
    backoff_factor: float = 2.0
    backoff_jitter: float = 0.2

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/" + self.endpoint.lstrip("/")

    def with_env_override(self, environ: dict[str, str] | None = None) -> "BackendConfig":
        env = os.environ if environ is None else environ
        override = env.get(BASE_URL_ENV)
        if not override:
            return self
        return replace(self, base_url=override)

    def backoff_delay(self, attempt: int, rng: random.Random | None = None) -> float:
        """Delay before retry number ``attempt`` (1 = first retry)."""
        base = self.backoff_initial * self.backoff_factor ** (attempt - 1)
        if base <= 0:
            return 0.0
        jitter = (rng or random).uniform(-self.backoff_jitter, self.backoff_jitter)
        return base * (1 + jitter)


@dataclass(frozen=True)
class RawResponse:
    text: str
    latency: float  # milliseconds
    attempt: int


class BackendError(Exception):
    def __init__(self, message: str, post_id: str | None = None, attempts: int = 0):
        super().__init__(message)
        self.post_id = post_id
        self.attempts = attempts

    @property
    def kind(self) -> str:
        return type(self).__name__


class BackendTimeout(BackendError):
    """No response within ``request_timeout``."""


class TransportError(BackendError):
    """Connection failure or non-2xx status after all retries."""


class _Retryable(Exception):
    def __init__(self, message: str, timeout: bool = False):
        super().__init__(message)
        self.timeout = timeout


class Backend:
    """Retry loop around a single-attempt ``_attempt`` hook."""

    def __init__(self, sleep: Callable[[float], None] = time.sleep, seed: int | None = None):
        self._sleep = sleep
        self._rng = random.Random(seed)

    def _attempt(self, prompt: RenderedPrompt, config: BackendConfig, post_id: str | None) -> str:
        raise NotImplementedError

    def generate(
        self, prompt: RenderedPrompt, config: BackendConfig, post_id: str | None = None
    ) -> RawResponse:
        last: _Retryable | None = None
        for attempt in range(1, config.max_retries + 2):
            if attempt > 1:
                self._sleep(config.backoff_delay(attempt - 1, self._rng))
            start = time.perf_counter()
            try:
                text = self._attempt(prompt, config, post_id)
            except _Retryable as exc:
                last = exc
                log.debug("attempt %d for %s failed: %s", attempt, post_id, exc)
                continue
            except BackendError as exc:
                exc.post_id = exc.post_id or post_id
                exc.attempts = attempt
                raise
            latency = (time.perf_counter() - start) * 1000.0
            return RawResponse(text=text, latency=latency, attempt=attempt)
        assert last is not None
        cls = BackendTimeout if last.timeout else TransportError
        raise cls(str(last), post_id=post_id, attempts=config.max_retries + 1)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class HttpBackend(Backend):
    """Client for a local model server (Ollama-style ``/api/generate``)."""

    RETRY_STATUS = {408, 429, 500, 502, 503, 504}

    def __init__(
        self,
        config: BackendConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(sleep=sleep)
        self._client = httpx.Client(timeout=config.request_timeout, transport=transport)

    def request_body(self, prompt: RenderedPrompt, config: BackendConfig) -> dict[str, Any]:
        return {
            "model": config.model_name,
            "prompt": prompt.text,
            "stream": False,
            "options": {"temperature": config.temperature},
        }

    def _attempt(self, prompt: RenderedPrompt, config: BackendConfig, post_id: str | None) -> str:
        try:
            resp = self._client.post(
                config.url, json=self.request_body(prompt, config), timeout=config.request_timeout
            )
        except httpx.TimeoutException as exc:
            raise _Retryable(f"timeout after {config.request_timeout}s: {exc}", timeout=True)
        except httpx.TransportError as exc:
            raise _Retryable(f"{type(exc).__name__}: {exc}")
        if resp.status_code in self.RETRY_STATUS:
            raise _Retryable(f"HTTP {resp.status_code}")
        if not resp.is_success:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}", post_id=post_id)
        try:
            payload = resp.json()
            text = payload[config.response_field]
        except (ValueError, KeyError, TypeError) as exc:
            raise TransportError(f"unexpected response body: {exc}", post_id=post_id)
        if not isinstance(text, str):
            raise TransportError("response field is not a string", post_id=post_id)
        return text

    def close(self) -> None:
        self._client.close()


def hashed_labels(text: str) -> EmotionLabelSet:
    """Deterministic pseudo-labels derived from a text digest."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return EmotionLabelSet(tuple(digest[i] % 3 == 0 for i in range(len(EMOTIONS))))


def render_answer(labels: EmotionLabelSet, severity: int | None = None) -> str:
    payload: dict[str, Any] = labels.to_dict()
    if severity is not None:
        payload["severity_score"] = severity
    return json.dumps(payload, indent=2)


def hashed_responder(prompt: RenderedPrompt) -> str:
    post = embedded_post(prompt.text) or prompt.text
    labels = hashed_labels(post)
    score = compute_severity(labels) if prompt.variant is PromptVariant.SCORED else None
    return render_answer(labels, score)


class MockBackend(Backend):
    """Deterministic in-process backend.

    ``responder`` maps a prompt to completion text (a fixed string is accepted
    too). ``transient_failures`` fails the first N attempts of every post;
    ``permanent_failures`` names post ids that always fail. ``delay`` may be a
    number of seconds or a callable of the post id, to force interleavings.
    """

    def __init__(
        self,
        responder: Callable[[RenderedPrompt], str] | str | None = None,
        *,
        transient_failures: int = 0,
        permanent_failures: Iterable[str] = (),
        delay: float | Callable[[str | None], float] = 0.0,
        sleep: Callable[[float], None] | None = None,
    ):
        super().__init__(sleep=sleep or (lambda s: None))
        if responder is None:
            responder = hashed_responder
        elif isinstance(responder, str):
            fixed = responder
            responder = lambda _p: fixed  # noqa: E731
        self._responder = responder
        self.transient_failures = transient_failures
        self.permanent_failures = set(permanent_failures)
        self._delay = delay
        self._lock = threading.Lock()
        self._attempts_by_post: dict[str | None, int] = {}
        self.calls: list[str | None] = []
        self.in_flight = 0
        self.peak_in_flight = 0

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def attempts_for(self, post_id: str | None) -> int:
        return self._attempts_by_post.get(post_id, 0)

    def _attempt(self, prompt: RenderedPrompt, config: BackendConfig, post_id: str | None) -> str:
        with self._lock:
            self.calls.append(post_id)
            n = self._attempts_by_post.get(post_id, 0) + 1
            self._attempts_by_post[post_id] = n
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            delay = self._delay(post_id) if callable(self._delay) else self._delay
            if delay:
                time.sleep(delay)
            if post_id in self.permanent_failures:
                raise _Retryable("injected permanent failure")
            if n <= self.transient_failures:
                raise _Retryable(f"injected transient failure {n}")
            return self._responder(prompt)
        finally:
            with self._lock:
                self.in_flight -= 1


@dataclass
class BatchSummary:
    ok: int = 0
    failed: int = 0
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.ok + self.failed


def run_bounded(
    items: Sequence[tuple[str, T]],
    work: Callable[[str, T], R],
    max_in_flight: int,
    on_result: Callable[[str, R | None, BaseException | None], None],
) -> None:
    """Run ``work`` over keyed items with at most ``max_in_flight`` outstanding calls.

    ``on_result`` is always called from the calling thread, one result at a time.
    Only ``Exception`` is delivered per item; anything else (e.g. KeyboardInterrupt)
    cancels pending work and propagates.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    keys = [k for k, _ in items]
    if len(set(keys)) != len(keys):
        raise ValueError("item keys must be unique within a batch")
    pending_items = iter(items)
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        running: dict[Future, str] = {}

        def submit_next() -> bool:
            try:
                key, item = next(pending_items)
            except StopIteration:
                return False
            running[pool.submit(work, key, item)] = key
            return True

        for _ in range(max_in_flight):
            if not submit_next():
                break
        try:
            while running:
                done, _ = wait(running, return_when=FIRST_COMPLETED)
                for fut in sorted(done, key=lambda f: running[f]):
                    key = running.pop(fut)
                    exc = fut.exception()
                    if exc is not None and not isinstance(exc, Exception):
                        raise exc
                    on_result(key, None if exc else fut.result(), exc)
                    submit_next()
        except BaseException:
            for fut in running:
                fut.cancel()
            raise


def generate_batch(
    backend: Backend,
    prompts: Sequence[tuple[str, RenderedPrompt]],
    config: BackendConfig,
    sink: Callable[[str, RawResponse | None, BaseException | None], None],
) -> BatchSummary:
    """Generate completions for keyed prompts; per-item failures never abort the batch."""
    summary = BatchSummary()

    def deliver(post_id: str, result: RawResponse | None, exc: BaseException | None) -> None:
        if exc is None:
            summary.ok += 1
        else:
            summary.failed += 1
            summary.failures[post_id] = f"{type(exc).__name__}: {exc}"
        sink(post_id, result, exc)

    run_bounded(
        prompts,
        lambda pid, prompt: backend.generate(prompt, config, post_id=pid),
        config.max_in_flight,
        deliver,
    )
    return summary
