"""Extract the declared fields from raw model text, tolerating surrounding prose."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..model import Aggregator, clamp_criterion
from .base import ParseError

_YES_NO = re.compile(r"\b(YES|NO)\b", re.IGNORECASE)
_AND_OR = re.compile(r"\b(AND|OR)\b")
_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?")
_QA_LINE = re.compile(
    r"^\s*(?:\d+[.)]\s*)?(?:\*\*)?(A|Answer|Q|Question)(?:\*\*)?\s*[:：]\s*(.*?)\s*$", re.IGNORECASE
)
_REMOVE = re.compile(r"REMOVE\s*[:：]\s*(.*)", re.IGNORECASE)


@dataclass(frozen=True)
class ScoreParse:
    value: float
    clamped: bool


def parse_yes_no(template_id: str, raw: str) -> bool:
    m = _YES_NO.search(raw)
    if not m:
        raise ParseError(template_id, raw, "expected YES or NO")
    return m.group(1).upper() == "YES"


def parse_qa_pairs(raw: str) -> list[tuple[str, str]]:
    """Return ``(question, answer)`` pairs from ``A:`` / ``Q:`` blocks, in order.

    An answer line opens a block and the next question line closes it; a
    question appearing before any answer is matched with the answer that
    directly follows it.
    """
    pairs: list[tuple[str, str]] = []
    pending_a: str | None = None
    pending_q: str | None = None
    for line in raw.splitlines():
        m = _QA_LINE.match(line)
        if not m:
            continue
        tag = m.group(1)[0].upper()
        body = m.group(2).strip()
        if not body:
            continue
        if tag == "A":
            if pending_q is not None:
                pairs.append((pending_q, body))
                pending_q = None
            else:
                pending_a = body
        else:
            if pending_a is not None:
                pairs.append((body, pending_a))
                pending_a = None
            else:
                pending_q = body
    return pairs


def parse_score(template_id: str, raw: str) -> ScoreParse:
    name = template_id[len("criterion_"):]
    text = raw.strip()
    if name == "vitality" and not _NUMBER.search(text):
        return ScoreParse(1.0 if parse_yes_no(template_id, text) else 0.0, False)
    m = _NUMBER.search(text)
    if not m:
        raise ParseError(template_id, raw, "no numeric score")
    value, clamped = clamp_criterion(name, float(m.group(0)))
    return ScoreParse(value, clamped)


def parse_removals(raw: str, n_answers: int | None = None) -> list[int]:
    """1-based answer numbers flagged for removal."""
    m = _REMOVE.search(raw)
    if not m:
        raise ParseError("validate_answers", raw, "missing REMOVE line")
    body = m.group(1).strip()
    if re.match(r"^(NONE|NOTHING|-)?\s*$", body, re.IGNORECASE) or body.upper().startswith("NONE"):
        return []
    nums = [int(x) for x in re.findall(r"\d+", body)]
    if not nums:
        raise ParseError("validate_answers", raw, "no answer numbers")
    if n_answers is not None and any(not 1 <= x <= n_answers for x in nums):
        raise ParseError("validate_answers", raw, "answer number out of range")
    return sorted(set(nums))


def parse_aggregator(raw: str) -> Aggregator:
    found = set(_AND_OR.findall(raw.upper()))
    if len(found) != 1:
        raise ParseError("assign_aggregator", raw, "expected exactly one of AND / OR")
    return Aggregator(found.pop())


def parse_text(template_id: str, raw: str) -> str:
    text = raw.strip()
    if template_id == "canonical_question":
        text = re.sub(r"^\s*(?:question\s*[:：]|\d+[.)])\s*", "", text, flags=re.IGNORECASE).strip()
        text = text.strip('"').strip()
        text = text.splitlines()[0].strip() if text else text
    else:
        text = re.sub(r"^\s*summary\s*[:：]\s*", "", text, flags=re.IGNORECASE).strip()
    if not text:
        raise ParseError(template_id, raw, "empty output")
    return text


def parse_structured(template_id: str, raw_text: str, **context):
    """Dispatch on ``template_id``.

    Returns a bool for YES/NO templates, a list of ``(question, answer)``
    pairs for ``generate_qa``, a :class:`ScoreParse` for criteria, a list of
    1-based indices for ``validate_answers``, an :class:`Aggregator` for
    ``assign_aggregator`` and stripped text otherwise.
    """
    if template_id in ("verify_paraphrase", "judge_nugget"):
        return parse_yes_no(template_id, raw_text)
    if template_id == "generate_qa":
        pairs = parse_qa_pairs(raw_text)
        if not pairs:
            raise ParseError(template_id, raw_text, "no A:/Q: blocks")
        return pairs
    if template_id.startswith("criterion_"):
        return parse_score(template_id, raw_text)
    if template_id == "validate_answers":
        return parse_removals(raw_text, context.get("n_answers"))
    if template_id == "assign_aggregator":
        return parse_aggregator(raw_text)
    if template_id in ("summarize", "canonical_question"):
        return parse_text(template_id, raw_text)
    raise ParseError(template_id, raw_text, "unknown template")


def ask(client, request, **context):
    """Chat, parse, and on a parse failure retry once with a format reminder.

    Raises :class:`ProviderError` or the second :class:`ParseError`.
    """
    raw = client.chat(request)
    try:
        return parse_structured(request.template_id, raw, **context)
    except ParseError:
        raw = client.chat(request.with_reminder())
        return parse_structured(request.template_id, raw, **context)
