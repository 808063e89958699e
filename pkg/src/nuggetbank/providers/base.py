from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .templates import FORMAT_HINTS, load_template

log = logging.getLogger(__name__)

PROVIDER_KINDS = ("http_chat", "http_embed", "mock")


class ProviderError(RuntimeError):
    """A provider call failed after exhausting its retries."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


class ParseError(ValueError):
    """Model output did not contain the fields a template declares."""

    def __init__(self, template_id: str, raw_text: str, reason: str = ""):
        super().__init__(f"cannot parse {template_id} output: {reason or 'no match'}")
        self.template_id = template_id
        self.raw_text = raw_text


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "mock"
    endpoint: str = ""
    model_name: str = "mock"
    auth_env_var: str = ""
    rate_limit: float = 6000.0  # requests per minute
    max_retries: int = 2
    cache_dir: str | None = None
    retry_backoff: float = 1.0
    timeout: float = 120.0
    # mock-only knobs
    mock_profile: str = "scripted"
    fail_rate: float = 0.0
    fail_seed: int = 0
    embed_dim: int = 256

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ValueError(f"provider kind must be one of {PROVIDER_KINDS}, got {self.kind!r}")
        if not self.rate_limit > 0:
            raise ValueError("rate_limit must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0.0 <= self.fail_rate <= 1.0:
            raise ValueError("fail_rate must be within [0, 1]")

    @classmethod
    def from_record(cls, rec: Mapping) -> "ProviderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(rec) - known
        if unknown:
            raise ValueError(f"unknown provider settings {sorted(unknown)}")
        return cls(**dict(rec))

    def to_record(self) -> dict:
        return asdict(self)

    def identity(self) -> dict:
        """Settings that change model outputs; used in stage fingerprints."""
        keys = ("kind", "endpoint", "model_name", "mock_profile", "fail_rate", "fail_seed", "embed_dim")
        return {k: getattr(self, k) for k in keys}


@dataclass(frozen=True)
class ChatRequest:
    template_id: str
    variables: Mapping[str, str] = field(default_factory=dict)
    max_output_tokens: int = 1024
    temperature: float = 0.0
    reminder: bool = False

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def render(self, template_root: str | None = None) -> str:
        text = load_template(self.template_id, template_root).render(dict(self.variables))
        if self.reminder:
            hint_key = "criterion" if self.template_id.startswith("criterion_") else self.template_id
            text += f"\nREMINDER: your previous reply could not be used. {FORMAT_HINTS[hint_key]}\n"
        return text

    def with_reminder(self) -> "ChatRequest":
        return replace(self, reminder=True)


@dataclass(frozen=True)
class EmbeddingRequest:
    texts: tuple[str, ...]

    def __post_init__(self):
        if not self.texts:
            raise ValueError("embedding request needs at least one text")
        if any(not t.strip() for t in self.texts):
            raise ValueError("embedding texts must be non-empty")


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def prompt_hash(prompt: str) -> str:
    return sha256_hex(prompt)


def cache_key(model_name: str, prompt: str, temperature: float, max_output_tokens: int) -> str:
    return sha256_hex(json.dumps([model_name, prompt, float(temperature), int(max_output_tokens)], ensure_ascii=False))


class RateLimiter:
    """Token bucket; ``acquire`` blocks until a request may be dispatched."""

    def __init__(self, per_minute: float, clock: Callable[[], float] = time.monotonic, sleep=time.sleep):
        self.rate = per_minute / 60.0
        self.capacity = max(1.0, self.rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


class ResponseCache:
    """Content-addressed text cache: memory, optionally backed by ``cache_dir/<2 hex>/<hash>``."""

    def __init__(self, cache_dir: str | os.PathLike | None = None):
        self.root = Path(cache_dir) if cache_dir else None
        self._mem: dict[str, str] = {}

    def _path(self, key: str) -> Path:
        assert self.root is not None
        return self.root / key[:2] / key

    def get(self, key: str) -> str | None:
        hit = self._mem.get(key)
        if hit is not None or self.root is None:
            return hit
        p = self._path(key)
        if p.exists():
            text = p.read_text(encoding="utf-8")
            self._mem[key] = text
            return text
        return None

    def put(self, key: str, text: str) -> None:
        self._mem[key] = text
        if self.root is None:
            return
        p = self._path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, p)


class ChatBackend(Protocol):
    def complete(self, prompt: str, request: ChatRequest) -> str: ...


class EmbedBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class ChatClient:
    """Cached, rate-limited, retrying front for a chat backend.

    ``calls`` counts backend dispatches, ``cache_hits`` counts calls served
    from cache and ``failures`` counts ``chat`` invocations that raised.
    """

    def __init__(self, config: ProviderConfig, backend: ChatBackend, template_root: str | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.backend = backend
        self.template_root = template_root
        self.cache = ResponseCache(config.cache_dir)
        self.limiter = RateLimiter(config.rate_limit)
        self._sleep = sleep
        self._lock = threading.Lock()
        self.calls = 0
        self.cache_hits = 0
        self.failures = 0

    def _bump(self, name: str) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)

    def chat(self, request: ChatRequest) -> str:
        prompt = request.render(self.template_root)
        key = cache_key(self.config.model_name, prompt, request.temperature, request.max_output_tokens)
        hit = self.cache.get(key)
        if hit is not None:
            self._bump("cache_hits")
            return hit
        attempts = 0
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            attempts += 1
            self.limiter.acquire()
            self._bump("calls")
            try:
                text = self.backend.complete(prompt, request)
            except Exception as exc:  # any backend failure is retried
                last = exc
                log.debug("chat attempt %d failed: %s", attempts, exc)
                if attempt < self.config.max_retries and self.config.retry_backoff > 0:
                    self._sleep(self.config.retry_backoff * (2**attempt))
                continue
            self.cache.put(key, text)
            return text
        self._bump("failures")
        raise ProviderError(f"{request.template_id} failed: {last}", attempts=attempts)


class EmbedClient:
    """Embedding front: per-text caching, unit normalization, fixed dimension."""

    def __init__(self, config: ProviderConfig, backend: EmbedBackend):
        self.config = config
        self.backend = backend
        self.limiter = RateLimiter(config.rate_limit)
        self.dim: int | None = None
        self._mem: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.calls = 0

    def embed(self, request: EmbeddingRequest | Sequence[str]) -> np.ndarray:
        texts = request.texts if isinstance(request, EmbeddingRequest) else EmbeddingRequest(tuple(request)).texts
        todo = sorted({t for t in texts if t not in self._mem})
        if todo:
            raw = None
            attempts = 0
            for attempt in range(self.config.max_retries + 1):
                attempts += 1
                self.limiter.acquire()
                with self._lock:
                    self.calls += 1
                try:
                    raw = self.backend.embed(todo)
                    break
                except Exception as exc:
                    log.debug("embed attempt %d failed: %s", attempts, exc)
                    if attempt < self.config.max_retries and self.config.retry_backoff > 0:
                        time.sleep(self.config.retry_backoff * (2**attempt))
            if raw is None:
                raise ProviderError("embedding request failed", attempts=attempts)
            if len(raw) != len(todo):
                raise ProviderError(f"expected {len(todo)} embeddings, got {len(raw)}", attempts=attempts)
            dims = {len(v) for v in raw}
            if len(dims) != 1 or (self.dim is not None and self.dim not in dims):
                raise ProviderError(f"embedding dimension mismatch {sorted(dims)}", attempts=attempts)
            self.dim = dims.pop()
            for t, v in zip(todo, raw):
                vec = np.asarray(v, dtype=np.float64)
                norm = float(np.linalg.norm(vec))
                if norm == 0.0:
                    raise ProviderError(f"zero embedding for {t!r}", attempts=attempts)
                self._mem[t] = vec / norm
        return np.vstack([self._mem[t] for t in texts])
