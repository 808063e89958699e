"""Stage 2B: canonical question, answer filtering and validation, culling,
and AND/OR aggregator assignment."""

from __future__ import annotations

import difflib
import re
import string
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .concurrency import parallel_map
from .model import Aggregator, ContractError, Diagnostics, QANugget, Topic
from .providers import ChatClient, ChatRequest, ParseError, ProviderError, ask

STAGE = "stage2b"

DEFAULT_UNINFORMATIVE = (
    r"none",
    r"null",
    r"nil",
    r"no answer",
    r"unknown",
    r"n/?a",
    r"not specified",
    r"not mentioned",
    r"not available",
    r"not stated",
)


@dataclass(frozen=True)
class UninformativePattern:
    pattern: str

    def __post_init__(self):
        re.compile(self.pattern)  # fail early on a bad asset

    @classmethod
    def from_alternatives(cls, alternatives: Sequence[str]) -> "UninformativePattern":
        return cls(r"^(?:" + "|".join(alternatives) + r")$")

    @classmethod
    def default(cls) -> "UninformativePattern":
        return cls.from_alternatives(DEFAULT_UNINFORMATIVE)

    @classmethod
    def from_file(cls, path: str | Path) -> "UninformativePattern":
        """One regex alternative per line; blank lines and ``#`` comments ignored."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        alts = [l.strip() for l in lines if l.strip() and not l.lstrip().startswith("#")]
        if not alts:
            raise ValueError(f"{path}: no patterns")
        return cls.from_alternatives(alts)

    def matches(self, answer_text: str) -> bool:
        core = answer_text.strip().strip(string.punctuation + " \t\n").strip()
        return re.match(self.pattern, core, re.IGNORECASE) is not None


def _norm(text: str) -> str:
    return re.sub(r"[\W_]+", " ", text.casefold()).strip()


def _numbered(items: Sequence[str]) -> str:
    return "\n".join(f"{i}. {t}" for i, t in enumerate(items, 1))


def longest_member(members: Sequence[str]) -> str:
    # first of the longest, so ties resolve by member order
    return max(members, key=len)


def match_member(reply: str, members: Sequence[str]) -> str | None:
    target = _norm(reply)
    for m in members:
        if _norm(m) == target:
            return m
    scored = [(difflib.SequenceMatcher(None, target, _norm(m)).ratio(), -i, m) for i, m in enumerate(members)]
    best = max(scored)
    return best[2] if best[0] >= 0.9 else None


def select_canonical_question(
    nugget: QANugget, topic: Topic, client: ChatClient, diagnostics: Diagnostics | None = None
) -> QANugget:
    members = list(nugget.provenance.member_question_texts)
    if not members:
        raise ContractError(f"{nugget.nugget_id} has no member questions")
    distinct = list(dict.fromkeys(members))
    if len(distinct) == 1:
        return replace(nugget, question=distinct[0])
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    req = ChatRequest("canonical_question", {"request": topic.request_text, "questions": _numbered(distinct)})
    try:
        reply = ask(client, req)
    except ProviderError as exc:
        diagnostics.add(STAGE, "provider_error", nugget.nugget_id, f"canonical_question: {exc}")
        return replace(nugget, question=longest_member(distinct))
    except ParseError as exc:
        diagnostics.add(STAGE, "parse_error", nugget.nugget_id, f"canonical_question: {exc}")
        return replace(nugget, question=longest_member(distinct))
    chosen = match_member(reply, distinct)
    if chosen is None:
        diagnostics.add(STAGE, "canonical_mismatch", nugget.nugget_id, f"reply {reply[:80]!r} is not a member")
        chosen = longest_member(distinct)
    return replace(nugget, question=chosen)


def filter_uninformative(nugget: QANugget, pattern: UninformativePattern) -> QANugget:
    return nugget.with_answers([a for a in nugget.answers if not pattern.matches(a.text)])


def validate_consistency(nugget: QANugget, client: ChatClient, diagnostics: Diagnostics | None = None) -> QANugget:
    """Drop answers the judge flags as implausible or contradictory (fail-open)."""
    if not nugget.answers:
        raise ContractError(f"{nugget.nugget_id} has no answers to validate")
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    req = ChatRequest(
        "validate_answers",
        {"question": nugget.question, "answers": _numbered([a.text for a in nugget.answers])},
    )
    try:
        flagged = set(ask(client, req, n_answers=len(nugget.answers)))
    except ProviderError as exc:
        diagnostics.add(STAGE, "provider_error", nugget.nugget_id, f"validate_answers: {exc}")
        return nugget
    except ParseError as exc:
        diagnostics.add(STAGE, "parse_error", nugget.nugget_id, f"validate_answers: {exc}")
        return nugget
    return nugget.with_answers([a for i, a in enumerate(nugget.answers, 1) if i not in flagged])


def assign_aggregator(nugget: QANugget, client: ChatClient, diagnostics: Diagnostics | None = None) -> QANugget:
    if not nugget.answers:
        raise ContractError(f"{nugget.nugget_id} has no answers")
    if len(nugget.answers) == 1:
        return replace(nugget, aggregator=Aggregator.OR)
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    req = ChatRequest(
        "assign_aggregator",
        {"question": nugget.question, "answers": _numbered([a.text for a in nugget.answers])},
    )
    try:
        agg = ask(client, req)
    except ProviderError as exc:
        diagnostics.add(STAGE, "provider_error", nugget.nugget_id, f"assign_aggregator: {exc}")
        agg = Aggregator.OR
    except ParseError as exc:
        diagnostics.add(STAGE, "parse_error", nugget.nugget_id, f"assign_aggregator: {exc}")
        agg = Aggregator.OR
    return replace(nugget, aggregator=agg)


def refine_one(
    nugget: QANugget,
    topic: Topic,
    client: ChatClient,
    pattern: UninformativePattern,
    diagnostics: Diagnostics,
) -> QANugget | None:
    n = select_canonical_question(nugget, topic, client, diagnostics)
    n = filter_uninformative(n, pattern)
    if n.answers:
        n = validate_consistency(n, client, diagnostics)
    if not n.answers:
        diagnostics.add(STAGE, "culled", n.nugget_id, "no answers left")
        return None
    return assign_aggregator(n, client, diagnostics)


def run_stage2b(
    merged: Sequence[QANugget],
    topic: Topic,
    client: ChatClient,
    pattern: UninformativePattern | None = None,
    diagnostics: Diagnostics | None = None,
    parallelism: int = 1,
) -> list[QANugget]:
    """canonical -> pattern filter -> consistency -> cull -> aggregator, per nugget."""
    pattern = pattern or UninformativePattern.default()
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    out = parallel_map(lambda n: refine_one(n, topic, client, pattern, diagnostics), merged, parallelism)
    return sorted((n for n in out if n is not None), key=lambda n: n.nugget_id)
