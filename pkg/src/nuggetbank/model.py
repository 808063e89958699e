"""Shared domain types and their record (dict) forms.

Every type is a frozen dataclass with ``to_record`` / ``from_record`` so the
line-delimited file formats in :mod:`nuggetbank.io` stay a thin layer.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import threading
from dataclasses import dataclass, field, fields, replace
from typing import Any, Iterable, Mapping, Sequence


class ContractError(ValueError):
    """A precondition or structural invariant was violated."""


class Aggregator(str, enum.Enum):
    AND = "AND"
    OR = "OR"


class SelectionMethod(str, enum.Enum):
    DOGMATIQ = "dogmatiq"
    COMMON = "common"
    SAMPLE = "sample"


def fingerprint(obj: Any) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def fold_aggregator(aggregator: Aggregator | str, answer_verdicts: Sequence[bool]) -> bool:
    if len(answer_verdicts) == 0:
        raise ContractError("cannot fold an empty verdict list")
    if Aggregator(aggregator) is Aggregator.OR:
        return any(answer_verdicts)
    return all(answer_verdicts)


# -- collection inputs --------------------------------------------------------


@dataclass(frozen=True)
class Persona:
    goal: str = ""
    background: str = ""
    role: str = ""
    communication: str = ""
    scope: str = ""

    def to_record(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_record(cls, rec: Mapping) -> "Persona":
        return cls(**{f.name: str(rec.get(f.name, "")) for f in fields(cls)})


@dataclass(frozen=True)
class Topic:
    topic_id: str
    title: str
    request_text: str
    persona: Persona | None = None

    def to_record(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "title": self.title,
            "request_text": self.request_text,
            "persona": self.persona.to_record() if self.persona else None,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "Topic":
        persona = rec.get("persona")
        return cls(
            topic_id=str(rec["topic_id"]),
            title=str(rec.get("title", "")),
            request_text=str(rec["request_text"]),
            persona=Persona.from_record(persona) if persona else None,
        )


@dataclass(frozen=True)
class Document:
    doc_id: str
    lang: str
    text: str

    def to_record(self) -> dict:
        return {"doc_id": self.doc_id, "lang": self.lang, "text": self.text}

    @classmethod
    def from_record(cls, rec: Mapping) -> "Document":
        return cls(doc_id=str(rec["doc_id"]), lang=str(rec["lang"]), text=str(rec["text"]))


@dataclass(frozen=True)
class RankingEntry:
    doc_id: str
    rank: int
    score: float


@dataclass(frozen=True)
class RetrievalRanking:
    topic_id: str
    entries: tuple[RankingEntry, ...]

    def top_k(self, k: int) -> tuple[RankingEntry, ...]:
        return tuple(sorted(self.entries, key=lambda e: e.rank)[:k])

    def to_record(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "entries": [{"doc_id": e.doc_id, "rank": e.rank, "score": e.score} for e in self.entries],
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "RetrievalRanking":
        return cls(
            topic_id=str(rec["topic_id"]),
            entries=tuple(
                RankingEntry(str(e["doc_id"]), int(e["rank"]), float(e["score"])) for e in rec["entries"]
            ),
        )


# -- nuggets ------------------------------------------------------------------


@dataclass(frozen=True)
class Answer:
    text: str
    doc_ids: tuple[str, ...]

    def __post_init__(self):
        # set semantics, canonical order
        object.__setattr__(self, "doc_ids", tuple(sorted(set(self.doc_ids))))

    def to_record(self) -> dict:
        return {"text": self.text, "doc_ids": list(self.doc_ids)}

    @classmethod
    def from_record(cls, rec: Mapping) -> "Answer":
        return cls(text=str(rec["text"]), doc_ids=tuple(str(d) for d in rec["doc_ids"]))


@dataclass(frozen=True)
class CandidateNugget:
    nugget_id: str
    topic_id: str
    question: str
    answers: tuple[Answer, ...]
    source_doc_id: str

    def to_record(self) -> dict:
        return {
            "nugget_id": self.nugget_id,
            "topic_id": self.topic_id,
            "question": self.question,
            "answers": [a.to_record() for a in self.answers],
            "source_doc_id": self.source_doc_id,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "CandidateNugget":
        return cls(
            nugget_id=str(rec["nugget_id"]),
            topic_id=str(rec["topic_id"]),
            question=str(rec["question"]),
            answers=tuple(Answer.from_record(a) for a in rec["answers"]),
            source_doc_id=str(rec["source_doc_id"]),
        )


# (name, low, high); order is the feature-vector layout
CRITERIA: tuple[tuple[str, float, float], ...] = (
    ("reading_level", 4.0, 13.0),
    ("complexity", 1.0, 6.0),
    ("vitality", 0.0, 1.0),
    ("goal_match", 0.0, 1.0),
    ("background_match", 0.0, 1.0),
    ("role_match", 0.0, 1.0),
    ("communication_match", 0.0, 1.0),
    ("scope_match", 0.0, 1.0),
    ("personalization_overall", 0.0, 1.0),
    ("fluency", 1.0, 5.0),
    ("clarity", 1.0, 5.0),
    ("ambiguity", 1.0, 5.0),
    ("relevance", 1.0, 5.0),
    ("incompleteness", 1.0, 5.0),
    ("assumptiveness", 1.0, 5.0),
    ("multifaceted", 1.0, 5.0),
    ("knowledge_intensiveness", 1.0, 5.0),
    ("subjectiveness", 1.0, 5.0),
    ("reasoning_intensiveness", 1.0, 5.0),
)
CRITERION_NAMES: tuple[str, ...] = tuple(c[0] for c in CRITERIA)
CRITERION_RANGES: dict[str, tuple[float, float]] = {c[0]: (c[1], c[2]) for c in CRITERIA}
BINARY_CRITERIA = frozenset({"vitality"})
PROGRAMMATIC_CRITERIA = ("reading_level", "complexity")
PROMPTED_CRITERIA: tuple[str, ...] = tuple(n for n in CRITERION_NAMES if n not in PROGRAMMATIC_CRITERIA)


def clamp_criterion(name: str, value: float) -> tuple[float, bool]:
    """Clamp ``value`` into the criterion's scale; returns ``(value, clamped)``."""
    lo, hi = CRITERION_RANGES[name]
    v = float(value)
    if math.isnan(v):
        raise ValueError(f"NaN for criterion {name}")
    if name in BINARY_CRITERIA:
        out = 1.0 if v >= 0.5 else 0.0
        return out, out != v
    out = min(max(v, lo), hi)
    return out, out != v


@dataclass(frozen=True)
class QualityVector:
    reading_level: float = 4.0
    complexity: float = 1.0
    vitality: float = 0.0
    goal_match: float = 0.0
    background_match: float = 0.0
    role_match: float = 0.0
    communication_match: float = 0.0
    scope_match: float = 0.0
    personalization_overall: float = 0.0
    fluency: float = 1.0
    clarity: float = 1.0
    ambiguity: float = 1.0
    relevance: float = 1.0
    incompleteness: float = 1.0
    assumptiveness: float = 1.0
    multifaceted: float = 1.0
    knowledge_intensiveness: float = 1.0
    subjectiveness: float = 1.0
    reasoning_intensiveness: float = 1.0

    def __post_init__(self):
        for name in CRITERION_NAMES:
            v, _ = clamp_criterion(name, getattr(self, name))
            object.__setattr__(self, name, v)

    def as_list(self) -> list[float]:
        return [getattr(self, n) for n in CRITERION_NAMES]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "QualityVector":
        if len(values) != len(CRITERION_NAMES):
            raise ContractError(f"expected {len(CRITERION_NAMES)} criteria, got {len(values)}")
        return cls(**dict(zip(CRITERION_NAMES, map(float, values))))

    def to_record(self) -> dict:
        return {n: getattr(self, n) for n in CRITERION_NAMES}

    @classmethod
    def from_record(cls, rec: Mapping) -> "QualityVector":
        return cls(**{n: float(rec[n]) for n in CRITERION_NAMES})


@dataclass(frozen=True)
class Provenance:
    member_question_texts: tuple[str, ...]
    cluster_size: int
    grounding_doc_count: int
    criteria: QualityVector | None = None
    selection_method: SelectionMethod | None = None
    selection_rank: int | None = None

    def to_record(self) -> dict:
        return {
            "member_question_texts": list(self.member_question_texts),
            "cluster_size": self.cluster_size,
            "grounding_doc_count": self.grounding_doc_count,
            "criteria": self.criteria.to_record() if self.criteria else None,
            "selection_method": self.selection_method.value if self.selection_method else None,
            "selection_rank": self.selection_rank,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "Provenance":
        crit = rec.get("criteria")
        method = rec.get("selection_method")
        rank = rec.get("selection_rank")
        return cls(
            member_question_texts=tuple(str(q) for q in rec["member_question_texts"]),
            cluster_size=int(rec["cluster_size"]),
            grounding_doc_count=int(rec["grounding_doc_count"]),
            criteria=QualityVector.from_record(crit) if crit else None,
            selection_method=SelectionMethod(method) if method else None,
            selection_rank=int(rank) if rank is not None else None,
        )


def grounding_docs(answers: Iterable[Answer]) -> frozenset[str]:
    return frozenset(d for a in answers for d in a.doc_ids)


@dataclass(frozen=True)
class QANugget:
    nugget_id: str
    topic_id: str
    question: str
    aggregator: Aggregator
    answers: tuple[Answer, ...]
    provenance: Provenance

    def with_answers(self, answers: Sequence[Answer]) -> "QANugget":
        """Copy with new answers and a recomputed grounding count."""
        prov = replace(self.provenance, grounding_doc_count=len(grounding_docs(answers)))
        return replace(self, answers=tuple(answers), provenance=prov)

    def to_record(self) -> dict:
        return {
            "nugget_id": self.nugget_id,
            "topic_id": self.topic_id,
            "question": self.question,
            "aggregator": self.aggregator.value,
            "answers": [a.to_record() for a in self.answers],
            "provenance": self.provenance.to_record(),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "QANugget":
        return cls(
            nugget_id=str(rec["nugget_id"]),
            topic_id=str(rec["topic_id"]),
            question=str(rec["question"]),
            aggregator=Aggregator(rec["aggregator"]),
            answers=tuple(Answer.from_record(a) for a in rec["answers"]),
            provenance=Provenance.from_record(rec["provenance"]),
        )


@dataclass(frozen=True)
class NuggetBank:
    topic_id: str
    selected: tuple[QANugget, ...]
    candidates: tuple[QANugget, ...]
    method: SelectionMethod
    config_fingerprint: str
    cap: int = 20

    def header_record(self) -> dict:
        return {
            "record": "bank",
            "topic_id": self.topic_id,
            "method": self.method.value,
            "config_fingerprint": self.config_fingerprint,
            "cap": self.cap,
            "selected": [n.nugget_id for n in self.selected],
            "n_candidates": len(self.candidates),
        }


def audit_bank(bank: NuggetBank) -> list[str]:
    """Return a list of invariant violations (empty when the bank is sound)."""
    problems: list[str] = []
    if len(bank.selected) > bank.cap:
        problems.append(f"{len(bank.selected)} selected exceeds cap {bank.cap}")
    cand_ids = [n.nugget_id for n in bank.candidates]
    if len(set(cand_ids)) != len(cand_ids):
        problems.append("duplicate candidate nugget_id")
    cand = {n.nugget_id: n for n in bank.candidates}
    ranks = []
    for n in bank.selected:
        if n.nugget_id not in cand:
            problems.append(f"selected {n.nugget_id} not among candidates")
        ranks.append(n.provenance.selection_rank)
    if ranks != list(range(1, len(bank.selected) + 1)):
        problems.append(f"selection ranks {ranks} are not 1..{len(bank.selected)}")
    for n in bank.candidates:
        if n.topic_id != bank.topic_id:
            problems.append(f"{n.nugget_id} belongs to topic {n.topic_id}")
        if not n.answers:
            problems.append(f"{n.nugget_id} has no answers")
        for a in n.answers:
            if not a.text.strip():
                problems.append(f"{n.nugget_id} has an empty answer")
            if not a.doc_ids:
                problems.append(f"{n.nugget_id} has an ungrounded answer")
        p = n.provenance
        if p.grounding_doc_count != len(grounding_docs(n.answers)):
            problems.append(f"{n.nugget_id} grounding_doc_count mismatch")
        if p.cluster_size != len(p.member_question_texts) or p.cluster_size < 1:
            problems.append(f"{n.nugget_id} cluster_size mismatch")
        if n.question not in p.member_question_texts:
            problems.append(f"{n.nugget_id} question not among member questions")
    return problems


# -- reports and judgments ----------------------------------------------------


@dataclass(frozen=True)
class Sentence:
    text: str
    citations: tuple[str, ...] = ()


@dataclass(frozen=True)
class Report:
    run_id: str
    topic_id: str
    sentences: tuple[Sentence, ...]

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)

    def to_record(self) -> dict:
        return {
            "run_id": self.run_id,
            "topic_id": self.topic_id,
            "sentences": [{"text": s.text, "citations": list(s.citations)} for s in self.sentences],
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "Report":
        return cls(
            run_id=str(rec["run_id"]),
            topic_id=str(rec["topic_id"]),
            sentences=tuple(
                Sentence(str(s["text"]), tuple(str(c) for c in s.get("citations", ()))) for s in rec["sentences"]
            ),
        )


@dataclass(frozen=True)
class Verdict:
    answer_verdicts: tuple[bool, ...]
    addressed: bool


JudgmentKey = tuple[str, str, str]  # (run_id, topic_id, nugget_id)


@dataclass(frozen=True)
class JudgmentSet:
    judge_label: str
    entries: Mapping[JudgmentKey, Verdict] = field(default_factory=dict)

    def get(self, run_id: str, topic_id: str, nugget_id: str) -> Verdict | None:
        return self.entries.get((run_id, topic_id, nugget_id))

    def merged(self, other: "JudgmentSet") -> "JudgmentSet":
        entries = dict(self.entries)
        entries.update(other.entries)
        return JudgmentSet(self.judge_label, entries)

    def records(self) -> list[dict]:
        return [
            {
                "judge_label": self.judge_label,
                "run_id": k[0],
                "topic_id": k[1],
                "nugget_id": k[2],
                "answer_verdicts": list(v.answer_verdicts),
                "addressed": v.addressed,
            }
            for k, v in sorted(self.entries.items())
        ]


@dataclass(frozen=True)
class ScoreMatrix:
    """Runs x topics scores; ``None`` marks a missing cell."""

    run_ids: tuple[str, ...]
    topic_ids: tuple[str, ...]
    scores: tuple[tuple[float | None, ...], ...]
    label: str = ""

    def __post_init__(self):
        if len(set(self.run_ids)) != len(self.run_ids) or len(set(self.topic_ids)) != len(self.topic_ids):
            raise ContractError("run/topic labels must be unique")
        if len(self.scores) != len(self.run_ids) or any(len(r) != len(self.topic_ids) for r in self.scores):
            raise ContractError("score matrix shape does not match labels")
        for row in self.scores:
            for v in row:
                if v is not None and not (0.0 <= v <= 1.0):
                    raise ContractError(f"score {v} outside [0, 1]")

    def value(self, run_id: str, topic_id: str) -> float | None:
        return self.scores[self.run_ids.index(run_id)][self.topic_ids.index(topic_id)]

    def row(self, run_id: str) -> dict[str, float]:
        r = self.scores[self.run_ids.index(run_id)]
        return {t: v for t, v in zip(self.topic_ids, r) if v is not None}

    def macro(self, run_id: str) -> float | None:
        present = list(self.row(run_id).values())
        return sum(present) / len(present) if present else None


# -- collection validation ----------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    item: str
    message: str
    stage: str = ""


class Diagnostics:
    """Thread-safe collector; ``sorted()`` gives an order independent of scheduling."""

    def __init__(self) -> None:
        self._items: list[Diagnostic] = []
        self._lock = threading.Lock()

    def add(self, stage: str, kind: str, item: str, message: str = "") -> None:
        d = Diagnostic(kind=kind, item=item, message=message, stage=stage)
        with self._lock:
            self._items.append(d)

    def extend(self, other: "Diagnostics") -> None:
        with self._lock:
            self._items.extend(other.items())

    def items(self) -> list[Diagnostic]:
        with self._lock:
            return list(self._items)

    def sorted(self) -> list[Diagnostic]:
        return sorted(self.items(), key=lambda d: (d.stage, d.kind, d.item, d.message))

    def count(self, kind: str | None = None, stage: str | None = None) -> int:
        return sum(
            1 for d in self.items() if (kind is None or d.kind == kind) and (stage is None or d.stage == stage)
        )

    def summary(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for d in self.items():
            key = f"{d.stage}:{d.kind}" if d.stage else d.kind
            out[key] = out.get(key, 0) + 1
        return dict(sorted(out.items()))

    def __len__(self) -> int:
        return len(self.items())


@dataclass(frozen=True)
class ValidationReport:
    diagnostics: tuple[Diagnostic, ...]

    @property
    def passed(self) -> bool:
        return not self.diagnostics


def validate_collection(
    topics: Sequence[Topic], documents: Sequence[Document], rankings: Sequence[RetrievalRanking]
) -> ValidationReport:
    diags: list[Diagnostic] = []

    def dupes(ids: Iterable[str], what: str) -> None:
        seen: set[str] = set()
        for i in ids:
            if i in seen:
                diags.append(Diagnostic("duplicate_id", i, f"duplicate {what} id"))
            seen.add(i)

    dupes((t.topic_id for t in topics), "topic")
    dupes((d.doc_id for d in documents), "document")
    for t in topics:
        if not t.topic_id:
            diags.append(Diagnostic("empty_field", "<topic>", "empty topic_id"))
        if not t.request_text.strip():
            diags.append(Diagnostic("empty_field", t.topic_id, "empty request_text"))
    for d in documents:
        if not d.text.strip():
            diags.append(Diagnostic("empty_field", d.doc_id, "empty document text"))
        if not d.lang:
            diags.append(Diagnostic("empty_field", d.doc_id, "empty lang"))
    doc_ids = {d.doc_id for d in documents}
    topic_ids = {t.topic_id for t in topics}
    for r in rankings:
        if r.topic_id not in topic_ids:
            diags.append(Diagnostic("dangling_reference", r.topic_id, "ranking for unknown topic"))
        ranks = [e.rank for e in r.entries]
        if ranks and (ranks[0] != 1 or any(b <= a for a, b in zip(ranks, ranks[1:]))):
            diags.append(Diagnostic("bad_ranking", r.topic_id, "ranks must increase strictly from 1"))
        dupes((f"{r.topic_id}:{e.doc_id}" for e in r.entries), "ranked document")
        for e in r.entries:
            if e.doc_id not in doc_ids:
                diags.append(Diagnostic("dangling_reference", e.doc_id, f"ranking {r.topic_id} cites unknown document"))
    return ValidationReport(tuple(diags))
