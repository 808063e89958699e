"""Backends speaking the common chat-completion / embedding JSON wire shape."""

from __future__ import annotations

import os
from typing import Sequence

import requests

from .base import ChatRequest, ProviderConfig


def _headers(config: ProviderConfig) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    if config.auth_env_var:
        token = os.environ.get(config.auth_env_var)
        if not token:
            raise RuntimeError(f"environment variable {config.auth_env_var} is not set")
        headers["Authorization"] = f"Bearer {token}"
    return headers


class HttpChat:
    def __init__(self, config: ProviderConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()

    def payload(self, prompt: str, request: ChatRequest) -> dict:
        return {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def complete(self, prompt: str, request: ChatRequest) -> str:
        resp = self.session.post(
            self.config.endpoint,
            json=self.payload(prompt, request),
            headers=_headers(self.config),
            timeout=self.config.timeout,
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class HttpEmbed:
    def __init__(self, config: ProviderConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        resp = self.session.post(
            self.config.endpoint,
            json={"model": self.config.model_name, "input": list(texts)},
            headers=_headers(self.config),
            timeout=self.config.timeout,
        )
        resp.raise_for_status()
        data = resp.json()["data"]
        # servers may return items out of order; honour "index" when present
        if all("index" in d for d in data):
            data = sorted(data, key=lambda d: d["index"])
        return [d["embedding"] for d in data]
