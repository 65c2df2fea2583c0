"""LLM provider contract, mock implementations, and the live client.

Providers are deliberately dumb: one blocking `complete` call per request.
Retry, rate limiting, and caching live in `generate_cached`, so every backend
(mock or live) observes the same at-most-once-per-cache-key discipline.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from .cache import ContextRecord, ContextStore, compute_cache_key
from .errors import ConfigurationError, GenerationError, RetriableBackendError
from .prompts import ResolvedPrompt

logger = logging.getLogger(__name__)

CAP_TEXT = "text"
CAP_IMAGE = "image"


@dataclass(frozen=True)
class ProviderRequest:
    prompt_id: str
    system: str
    text: str
    image: Optional[bytes] = None


class LLMProvider(Protocol):
    provider_id: str
    capabilities: frozenset[str]

    def complete(self, request: ProviderRequest) -> str: ...


class EchoProvider:
    """Deterministic mock: replies with the resolved request text.

    Image requests additionally carry a short digest of the image bytes so
    different images yield different outputs.
    """

    def __init__(self, provider_id: str = "mock-echo"):
        self.provider_id = provider_id
        self.capabilities = frozenset({CAP_TEXT, CAP_IMAGE})
        self.calls = 0

    def complete(self, request: ProviderRequest) -> str:
        self.calls += 1
        if request.image is not None:
            tag = hashlib.sha256(request.image).hexdigest()[:12]
            return f"{request.text}\n\n[image:{tag}]"
        return request.text


class MockLabelerProvider(EchoProvider):
    """Echo mock that answers prediction prompts with valid labels.

    Label choice is a digest of the request, so runs are deterministic and
    the reply parser sees realistic, well-formed outputs.
    """

    _BINARY = ("yes", "no")
    _MULTICLASS = (
        "White Grievance",
        "Incitement",
        "Stereotypical",
        "Inferiority",
        "Irony",
        "Threatening",
        "Other",
    )
    _MULTILABEL = ("Shaming", "Stereotype", "Objectification", "Violence")

    def __init__(self):
        super().__init__(provider_id="mock-labeler")

    def complete(self, request: ProviderRequest) -> str:
        if not request.prompt_id.startswith("predict_"):
            return super().complete(request)
        self.calls += 1
        payload = (request.prompt_id + "\x1f" + request.text).encode("utf-8") + (request.image or b"")
        digest = int.from_bytes(hashlib.sha256(payload).digest()[:4], "big")
        if "binary" in request.prompt_id:
            return self._BINARY[digest % 2]
        if "multiclass" in request.prompt_id:
            return self._MULTICLASS[digest % len(self._MULTICLASS)]
        chosen = [label for i, label in enumerate(self._MULTILABEL) if (digest >> i) & 1]
        return ", ".join(chosen) if chosen else "None"


class ScriptedProvider:
    """Mock with per-prompt-id scripted replies (string or callable)."""

    def __init__(
        self,
        script: dict[str, str | Callable[[ProviderRequest], str]],
        provider_id: str = "mock-scripted",
        capabilities: frozenset[str] = frozenset({CAP_TEXT, CAP_IMAGE}),
    ):
        self.script = script
        self.provider_id = provider_id
        self.capabilities = capabilities
        self.calls = 0
        self.calls_by_prompt: dict[str, int] = {}

    def complete(self, request: ProviderRequest) -> str:
        self.calls += 1
        self.calls_by_prompt[request.prompt_id] = self.calls_by_prompt.get(request.prompt_id, 0) + 1
        if request.prompt_id not in self.script:
            raise RetriableBackendError(f"no scripted reply for prompt {request.prompt_id!r}")
        entry = self.script[request.prompt_id]
        return entry(request) if callable(entry) else entry


class GeminiProvider:
    """Live client for Google's generative-language REST API.

    Credentials come from the GEMINI_API_KEY environment variable. Decoding is
    pinned to temperature 0. Only used in integration-tier runs; the test
    suite never constructs it.
    """

    ENDPOINT = "https://generativelanguage.googleapis.com/v1beta/models/{model}:generateContent"

    def __init__(self, model: str, api_key: Optional[str] = None, timeout: float = 60.0):
        self.provider_id = f"gemini:{model}"
        self.capabilities = frozenset({CAP_TEXT, CAP_IMAGE})
        self.model = model
        self.timeout = timeout
        self._api_key = api_key or os.environ.get("GEMINI_API_KEY")
        if not self._api_key:
            raise ConfigurationError("GEMINI_API_KEY is not set")

    def complete(self, request: ProviderRequest) -> str:
        import base64

        import requests

        parts: list[dict] = [{"text": request.text}]
        if request.image is not None:
            parts.append(
                {
                    "inline_data": {
                        "mime_type": "image/jpeg",
                        "data": base64.b64encode(request.image).decode("ascii"),
                    }
                }
            )
        body = {
            "system_instruction": {"parts": [{"text": request.system}]},
            "contents": [{"role": "user", "parts": parts}],
            "generationConfig": {"temperature": 0.0},
        }
        try:
            response = requests.post(
                self.ENDPOINT.format(model=self.model),
                params={"key": self._api_key},
                json=body,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise RetriableBackendError(f"request failed: {exc}") from exc
        if response.status_code in (429, 500, 502, 503, 504):
            raise RetriableBackendError(f"HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code != 200:
            raise GenerationError(f"HTTP {response.status_code}: {response.text[:200]}", cache_key="")
        payload = response.json()
        try:
            return "".join(
                part.get("text", "")
                for part in payload["candidates"][0]["content"]["parts"]
            )
        except (KeyError, IndexError) as exc:
            raise RetriableBackendError(f"malformed response: {payload}") from exc


class TokenBucket:
    """Thread-safe token-bucket rate limiter."""

    def __init__(self, rate_per_sec: float, burst: int = 1, clock=time.monotonic, sleep=time.sleep):
        self.rate = float(rate_per_sec)
        self.capacity = float(max(1, burst))
        self._tokens = self.capacity
        self._updated = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass
class RetryPolicy:
    """Exponential backoff with jitter; item fails after the last attempt."""

    attempts: int = 5
    base_delay: float = 0.5
    max_delay: float = 30.0
    sleep: Callable[[float], None] = field(default=time.sleep)

    def delay(self, attempt: int, rng: random.Random) -> float:
        backoff = min(self.max_delay, self.base_delay * (2**attempt))
        return backoff * (0.5 + rng.random())


def generate_cached(
    provider: LLMProvider,
    store: ContextStore,
    resolved: ResolvedPrompt,
    inputs: dict[str, str],
    *,
    post_id: str,
    mode: str,
    image: Optional[bytes] = None,
    retry: Optional[RetryPolicy] = None,
    limiter: Optional[TokenBucket] = None,
) -> ContextRecord:
    """Run one generation through the cache: hit returns, miss calls the provider.

    The cache key digests (prompt id, resolved inputs, provider id), so the
    pipeline observes at most one provider call per distinct request even
    across process restarts.
    """
    if resolved.expects_image and image is None:
        raise ConfigurationError(f"prompt {resolved.prompt_id!r} requires an image input")
    if resolved.expects_image and CAP_IMAGE not in provider.capabilities:
        raise ConfigurationError(
            f"provider {provider.provider_id!r} lacks the image capability"
        )

    image_digest = hashlib.sha256(image).hexdigest() if image is not None else None
    cache_key = compute_cache_key(resolved.prompt_id, inputs, provider.provider_id, image_digest)
    mine = store.lookup(post_id, mode, resolved.prompt_id)
    if mine is not None and mine.cache_key == cache_key:
        return mine
    cached = store.get(cache_key)
    if cached is not None:
        # Another post already generated these exact inputs: reuse the text,
        # but record a row for this post so per-post lookups succeed.
        return store.put(
            ContextRecord(
                post_id=post_id,
                mode=mode,
                text=cached.text,
                prompt_id=resolved.prompt_id,
                provider_id=provider.provider_id,
                cache_key=cache_key,
            )
        )

    retry = retry or RetryPolicy()
    rng = random.Random()
    request = ProviderRequest(
        prompt_id=resolved.prompt_id, system=resolved.system, text=resolved.text, image=image
    )
    last_error: Exception | None = None
    for attempt in range(retry.attempts):
        if limiter is not None:
            limiter.acquire()
        try:
            text = provider.complete(request)
            record = ContextRecord(
                post_id=post_id,
                mode=mode,
                text=text,
                prompt_id=resolved.prompt_id,
                provider_id=provider.provider_id,
                cache_key=cache_key,
            )
            return store.put(record)
        except RetriableBackendError as exc:
            last_error = exc
            if attempt + 1 < retry.attempts:
                pause = retry.delay(attempt, rng)
                logger.debug(
                    "attempt %d/%d for %s failed (%s); retrying in %.2fs",
                    attempt + 1,
                    retry.attempts,
                    cache_key[:12],
                    exc,
                    pause,
                )
                retry.sleep(pause)
    raise GenerationError(f"provider failed after {retry.attempts} attempts: {last_error}", cache_key)


def build_provider(provider_id: str, model: str = "") -> LLMProvider:
    """Instantiate a provider from its config identifier."""
    if provider_id in ("mock", "mock-echo"):
        return EchoProvider()
    if provider_id == "mock-labeler":
        return MockLabelerProvider()
    if provider_id == "gemini":
        if not model:
            raise ConfigurationError("gemini provider requires a model identifier")
        return GeminiProvider(model)
    raise ConfigurationError(f"unknown provider id {provider_id!r}")
