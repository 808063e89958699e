"""Chat and embedding providers behind one cached, retrying interface."""

from __future__ import annotations

from .base import (
    ChatClient,
    ChatRequest,
    EmbedClient,
    EmbeddingRequest,
    ParseError,
    ProviderConfig,
    ProviderError,
    RateLimiter,
    ResponseCache,
    cache_key,
    prompt_hash,
)
from .http import HttpChat, HttpEmbed
from .mock import HashingEmbedder, MockChat, ScriptedResponder, TableEmbedder
from .parsing import ScoreParse, ask, parse_structured
from .templates import TEMPLATE_IDS, load_template


def build_chat(config: ProviderConfig, template_root: str | None = None) -> ChatClient:
    if config.kind == "mock":
        if config.mock_profile != "scripted":
            raise ValueError(f"unknown mock profile {config.mock_profile!r}")
        backend = MockChat(responder=ScriptedResponder(), fail_rate=config.fail_rate, fail_seed=config.fail_seed)
    elif config.kind == "http_chat":
        backend = HttpChat(config)
    else:
        raise ValueError(f"provider kind {config.kind!r} cannot serve chat requests")
    return ChatClient(config, backend, template_root=template_root)


def build_embedder(config: ProviderConfig) -> EmbedClient:
    if config.kind == "mock":
        backend = HashingEmbedder(config.embed_dim)
    elif config.kind == "http_embed":
        backend = HttpEmbed(config)
    else:
        raise ValueError(f"provider kind {config.kind!r} cannot serve embeddings")
    return EmbedClient(config, backend)


def chat(config: ProviderConfig, request: ChatRequest) -> str:
    """One-off chat call; long-lived code should hold a :class:`ChatClient`."""
    return build_chat(config).chat(request)


def embed(config: ProviderConfig, request: EmbeddingRequest):
    return build_embedder(config).embed(request)


__all__ = [
    "ChatClient",
    "ChatRequest",
    "EmbedClient",
    "EmbeddingRequest",
    "HashingEmbedder",
    "HttpChat",
    "HttpEmbed",
    "MockChat",
    "ParseError",
    "ProviderConfig",
    "ProviderError",
    "RateLimiter",
    "ResponseCache",
    "ScoreParse",
    "ScriptedResponder",
    "TEMPLATE_IDS",
    "TableEmbedder",
    "ask",
    "build_chat",
    "build_embedder",
    "cache_key",
    "chat",
    "embed",
    "load_template",
    "parse_structured",
    "prompt_hash",
]
