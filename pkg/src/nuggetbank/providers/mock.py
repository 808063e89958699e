"""Deterministic offline providers.

``MockChat`` answers from a canned ``{prompt_hash: text}`` map and/or a
responder callable; ``ScriptedResponder`` is a rule-based stand-in for every
template so the whole pipeline runs without a network. Failure injection is
a pure function of ``(fail_seed, prompt)``, so it is identical across
thread schedules.
"""

from __future__ import annotations

import hashlib
import re
import threading
from typing import Callable, Mapping, Sequence

import numpy as np

from ..model import CRITERION_RANGES
from .base import ChatRequest, prompt_hash

_WORD = re.compile(r"[\w']+", re.UNICODE)
_SENT = re.compile(r"(?<=[.!?。])\s+")


class InjectedFailure(RuntimeError):
    pass


def _unit_hash(*parts: object) -> float:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2.0**64


def tokens(text: str) -> list[str]:
    return [t.lower() for t in _WORD.findall(text)]


def normalize_text(text: str) -> str:
    return " ".join(tokens(text))


class MockChat:
    """Chat backend for tests: canned map first, then responder."""

    def __init__(
        self,
        canned: Mapping[str, str] | None = None,
        responder: Callable[[ChatRequest, str], str] | None = None,
        fail_rate: float = 0.0,
        fail_seed: int = 0,
    ):
        self.canned = dict(canned or {})
        self.responder = responder
        self.fail_rate = fail_rate
        self.fail_seed = fail_seed
        self.injected = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str, request: ChatRequest) -> str:
        if self.fail_rate > 0 and _unit_hash(self.fail_seed, prompt) < self.fail_rate:
            with self._lock:
                self.injected += 1
            raise InjectedFailure("injected provider failure")
        key = prompt_hash(prompt)
        if key in self.canned:
            return self.canned[key]
        if self.responder is None:
            raise KeyError(f"no canned response for prompt {key[:12]}")
        return self.responder(request, prompt)


class ScriptedResponder:
    """Rule-based answers for every template; see module docstring."""

    verbs = ("is", "was", "are", "were", "has", "had")

    def __call__(self, request: ChatRequest, prompt: str) -> str:
        tid = request.template_id
        v = request.variables
        if tid == "summarize":
            sents = [s.strip() for s in _SENT.split(v["document"].strip()) if s.strip()]
            return " ".join(sents[:4])
        if tid == "generate_qa":
            return self._qa(v["summary"])
        if tid == "verify_paraphrase":
            a, b = set(tokens(v["question_a"])), set(tokens(v["question_b"]))
            jac = len(a & b) / max(1, len(a | b))
            return "YES" if jac >= 0.6 else "NO"
        if tid == "canonical_question":
            lines = [l for l in v["questions"].splitlines() if l.strip()]
            first = re.sub(r"^\s*\d+[.)]\s*", "", lines[0]).strip()
            return first
        if tid == "validate_answers":
            flagged = []
            for line in v["answers"].splitlines():
                m = re.match(r"^\s*(\d+)[.)]\s*(.*)$", line)
                if m and re.search(r"\b(unverified|rumou?red)\b", m.group(2), re.IGNORECASE):
                    flagged.append(m.group(1))
            return "REMOVE: " + (", ".join(flagged) if flagged else "NONE")
        if tid == "assign_aggregator":
            return "AND" if " and " in f" {v['question'].lower()} " else "OR"
        if tid == "judge_nugget":
            return "YES" if normalize_text(v["answer"]) in normalize_text(v["report"]) else "NO"
        if tid.startswith("criterion_"):
            return self._criterion(tid[len("criterion_"):], v)
        raise KeyError(f"scripted responder has no rule for {tid}")

    def _qa(self, summary: str) -> str:
        blocks = []
        for sent in _SENT.split(summary.strip()):
            sent = sent.strip().rstrip(".!?。").strip()
            words = sent.split()
            verb_at = next((i for i, w in enumerate(words) if w.lower() in self.verbs and i > 0), None)
            if verb_at is None or verb_at == len(words) - 1:
                continue
            subject = " ".join(words[:verb_at])
            subject = subject[0].lower() + subject[1:] if subject[:1].isupper() and not subject[:2].isupper() else subject
            answer = " ".join(words[verb_at + 1:])
            blocks.append(f"A: {answer}\nQ: What {words[verb_at].lower()} {subject}?")
        return "\n".join(blocks)

    def _criterion(self, name: str, v: Mapping[str, str]) -> str:
        lo, hi = CRITERION_RANGES[name]
        q, req = v.get("question", ""), v.get("request", "")
        overlap = len(set(tokens(q)) & set(tokens(req))) / max(1, len(set(tokens(q))))
        if name == "relevance":
            return f"Score: {1.0 + 4.0 * overlap:.2f}"
        if name == "vitality":
            return "1" if overlap >= 0.3 else "0"
        u = _unit_hash(name, q)
        return f"{lo + u * (hi - lo):.2f}"


class HashingEmbedder:
    """Feature-hashed bag of words: cosine tracks word overlap."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for t in texts:
            vec = np.zeros(self.dim)
            toks = tokens(t) or [t]
            for tok in toks:
                h = hashlib.sha256(tok.encode("utf-8")).digest()
                idx = int.from_bytes(h[:4], "big") % self.dim
                vec[idx] += 1.0 if h[4] & 1 else -1.0
            if not vec.any():
                vec[0] = 1.0
            out.append(vec.tolist())
        return out


class TableEmbedder:
    """Looks vectors up in a fixed ``{text: vector}`` table."""

    def __init__(self, table: Mapping[str, Sequence[float]]):
        self.table = {k: list(map(float, v)) for k, v in table.items()}
        self.calls = 0

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        self.calls += 1
        return [self.table[t] for t in texts]
