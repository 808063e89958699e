"""Per-nugget quality vector: two text statistics computed locally, the rest
prompted one criterion at a time."""

from __future__ import annotations

import re
from typing import Sequence

from ..concurrency import parallel_map
from ..model import (
    CRITERION_RANGES,
    PROMPTED_CRITERIA,
    Diagnostics,
    QANugget,
    QualityVector,
    Topic,
    clamp_criterion,
)
from ..providers import ChatClient, ChatRequest, ParseError, ProviderError, ask

STAGE = "stage3"

_WORD = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)?")
_SENT_END = re.compile(r"[.!?;]+")
_VOWEL_GROUP = re.compile(r"[aeiouy]+")
SUBORDINATORS = frozenset(
    "after although because before if once since than that though unless until when whenever where "
    "whereas whether which while who whom whose why how".split()
)

# method tag recorded in configuration fingerprints
COMPLEXITY_METHOD = "clause-markers-v1"
READING_LEVEL_METHOD = "flesch-kincaid-grade-v1"


def count_syllables(word: str) -> int:
    w = word.lower().replace("'", "")
    groups = len(_VOWEL_GROUP.findall(w))
    if w.endswith("e") and not w.endswith(("le", "ee", "ye")) and groups > 1:
        groups -= 1
    return max(1, groups)


def _sentences(texts: Sequence[str]) -> list[str]:
    out = []
    for t in texts:
        out.extend(s for s in _SENT_END.split(t) if _WORD.search(s))
    return out


def nugget_texts(nugget: QANugget) -> list[str]:
    return [nugget.question, *(a.text for a in nugget.answers)]


def reading_level(texts: Sequence[str]) -> float:
    """Flesch-Kincaid grade level, clamped to the 4-13 scale."""
    sents = _sentences(texts)
    words = [w for s in sents for w in _WORD.findall(s)]
    if not words:
        return CRITERION_RANGES["reading_level"][0]
    syllables = sum(count_syllables(w) for w in words)
    grade = 0.39 * (len(words) / len(sents)) + 11.8 * (syllables / len(words)) - 15.59
    return clamp_criterion("reading_level", grade)[0]


def complexity(texts: Sequence[str]) -> float:
    """Mean clauses per sentence (1 + subordinators + commas), clamped to 1-6."""
    sents = _sentences(texts)
    if not sents:
        return CRITERION_RANGES["complexity"][0]
    loads = []
    for s in sents:
        words = [w.lower() for w in _WORD.findall(s)]
        loads.append(1 + sum(w in SUBORDINATORS for w in words) + s.count(","))
    return clamp_criterion("complexity", sum(loads) / len(loads))[0]


def midpoint(name: str) -> float:
    if name == "vitality":
        return 0.0  # a binary scale has no midpoint; failures count as not vital
    lo, hi = CRITERION_RANGES[name]
    return (lo + hi) / 2.0


def persona_text(topic: Topic) -> str:
    p = topic.persona
    if p is None:
        return "not provided"
    parts = [f"{k}: {v}" for k, v in p.to_record().items() if v]
    return "; ".join(parts) if parts else "not provided"


def score_criteria(
    nugget: QANugget,
    topic: Topic,
    client: ChatClient,
    diagnostics: Diagnostics | None = None,
    parallelism: int = 1,
) -> QualityVector:
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    texts = nugget_texts(nugget)
    variables = {
        "request": topic.request_text,
        "persona": persona_text(topic),
        "question": nugget.question,
        "answers": "; ".join(a.text for a in nugget.answers),
    }

    def one(name: str) -> float:
        try:
            parsed = ask(client, ChatRequest(f"criterion_{name}", variables, max_output_tokens=16))
        except ProviderError as exc:
            diagnostics.add(STAGE, "provider_error", f"{nugget.nugget_id}#{name}", str(exc))
            return midpoint(name)
        except ParseError as exc:
            diagnostics.add(STAGE, "parse_error", f"{nugget.nugget_id}#{name}", str(exc))
            return midpoint(name)
        if parsed.clamped:
            diagnostics.add(STAGE, "clamped", f"{nugget.nugget_id}#{name}", f"score clamped to {parsed.value}")
        return parsed.value

    prompted = dict(zip(PROMPTED_CRITERIA, parallel_map(one, PROMPTED_CRITERIA, parallelism)))
    return QualityVector(reading_level=reading_level(texts), complexity=complexity(texts), **prompted)
