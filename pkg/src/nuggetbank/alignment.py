"""One-to-one alignment of generated and gold nugget questions by embedding
similarity, using gold-proposing deferred acceptance."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .io import atomic_write_text, write_jsonl
from .model import ContractError
from .providers import EmbedClient

DEFAULT_CLEAR_THRESHOLD = 0.72


class Judgment(str, enum.Enum):
    CLEAR = "clear"
    UNCLEAR = "unclear"


@dataclass(frozen=True)
class MatchPair:
    gold_id: str
    gen_id: str
    cosine: float
    judged: Judgment | None = None
    gold_question: str = ""
    gen_question: str = ""

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.cosine <= 1.0 + 1e-9:
            raise ContractError(f"cosine {self.cosine} outside [-1, 1]")
        if self.judged is not None:
            object.__setattr__(self, "judged", Judgment(self.judged))

    def to_record(self) -> dict:
        return {
            "gold_id": self.gold_id,
            "gen_id": self.gen_id,
            "cosine": self.cosine,
            "judged": self.judged.value if self.judged else None,
            "gold_question": self.gold_question,
            "gen_question": self.gen_question,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "MatchPair":
        return cls(
            rec["gold_id"],
            rec["gen_id"],
            float(rec["cosine"]),
            rec.get("judged"),
            rec.get("gold_question", ""),
            rec.get("gen_question", ""),
        )


def _preferences(sim: np.ndarray, own_ids: Sequence[str], other_ids: Sequence[str]) -> list[list[int]]:
    """Row i's partners, best first: cosine descending, then partner id."""
    return [sorted(range(len(other_ids)), key=lambda j: (-sim[i, j], other_ids[j])) for i in range(len(own_ids))]


def match_from_similarity(gold_ids: Sequence[str], gen_ids: Sequence[str], sim) -> list[tuple[str, str, float]]:
    """Deferred acceptance over a precomputed ``|gold| x |gen|`` similarity matrix.

    Returns ``(gold_id, gen_id, cosine)`` triples sorted by gold id.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.shape != (len(gold_ids), len(gen_ids)):
        raise ContractError(f"similarity shape {sim.shape} != ({len(gold_ids)}, {len(gen_ids)})")
    if len(set(gold_ids)) != len(gold_ids) or len(set(gen_ids)) != len(gen_ids):
        raise ContractError("ids must be unique within each side")
    prefs = _preferences(sim, gold_ids, gen_ids)
    # gen-side rank of each gold (lower is better)
    gen_rank = [
        {g: r for r, g in enumerate(sorted(range(len(gold_ids)), key=lambda g: (-sim[g, j], gold_ids[g])))}
        for j in range(len(gen_ids))
    ]
    next_choice = [0] * len(gold_ids)
    holder: dict[int, int] = {}
    free = sorted(range(len(gold_ids)), key=lambda g: gold_ids[g], reverse=True)
    while free:
        g = free.pop()
        if next_choice[g] >= len(gen_ids):
            continue  # rejected everywhere; stays unmatched
        j = prefs[g][next_choice[g]]
        next_choice[g] += 1
        cur = holder.get(j)
        if cur is None:
            holder[j] = g
        elif gen_rank[j][g] < gen_rank[j][cur]:
            holder[j] = g
            free.append(cur)
        else:
            free.append(g)
    pairs = [(gold_ids[g], gen_ids[j], float(sim[g, j])) for j, g in holder.items()]
    return sorted(pairs)


def blocking_pairs(
    matching: Sequence[tuple[str, str]], gold_ids: Sequence[str], gen_ids: Sequence[str], sim
) -> list[tuple[str, str]]:
    """Pairs ``(g, n)`` that both strictly prefer each other to their partners.

    Being unmatched ranks below every partner. Preferences use the same
    cosine-then-id order as the matcher.
    """
    sim = np.asarray(sim, dtype=np.float64)
    gi = {g: i for i, g in enumerate(gold_ids)}
    ni = {n: j for j, n in enumerate(gen_ids)}
    gold_partner = {g: n for g, n in matching}
    gen_partner = {n: g for g, n in matching}

    def gold_prefers(g: str, a: str, b: str | None) -> bool:
        if b is None:
            return True
        return (-sim[gi[g], ni[a]], a) < (-sim[gi[g], ni[b]], b)

    def gen_prefers(n: str, a: str, b: str | None) -> bool:
        if b is None:
            return True
        return (-sim[gi[a], ni[n]], a) < (-sim[gi[b], ni[n]], b)

    out = []
    for g in gold_ids:
        for n in gen_ids:
            if gold_partner.get(g) == n:
                continue
            if gold_prefers(g, n, gold_partner.get(g)) and gen_prefers(n, g, gen_partner.get(n)):
                out.append((g, n))
    return out


def stable_match(
    gold_questions: Mapping[str, str],
    gen_questions: Mapping[str, str],
    embedder: EmbedClient,
) -> list[MatchPair]:
    """Match each gold question to a generated one; excess golds stay unmatched."""
    if not gold_questions or not gen_questions:
        raise ContractError("both question sets must be non-empty")
    gold_ids = sorted(gold_questions)
    gen_ids = sorted(gen_questions)
    gv = embedder.embed([gold_questions[i] for i in gold_ids])
    nv = embedder.embed([gen_questions[i] for i in gen_ids])
    sim = np.clip(gv @ nv.T, -1.0, 1.0)
    return [
        MatchPair(g, n, c, None, gold_questions[g], gen_questions[n])
        for g, n, c in match_from_similarity(gold_ids, gen_ids, sim)
    ]


def unmatched_gold(pairs: Sequence[MatchPair], gold_ids) -> list[str]:
    matched = {p.gold_id for p in pairs}
    return sorted(g for g in gold_ids if g not in matched)


def alignment_report(
    pairs: Sequence[MatchPair],
    threshold_clear: float = DEFAULT_CLEAR_THRESHOLD,
    unmatched: Sequence[str] = (),
) -> str:
    """Plain-text listing of matched pairs split into clear and unclear groups.

    A pair's human ``judged`` label decides its group; unjudged pairs are
    placed provisionally by ``cosine >= threshold_clear``. Each group is
    sorted by cosine descending and the ``JUDGED`` field stays blank for
    unjudged pairs.
    """
    if not pairs and not unmatched:
        return ""

    def is_clear(p: MatchPair) -> bool:
        return p.judged is Judgment.CLEAR if p.judged else p.cosine >= threshold_clear

    order = lambda p: (-p.cosine, p.gold_id, p.gen_id)  # noqa: E731
    clear = sorted((p for p in pairs if is_clear(p)), key=order)
    unclear = sorted((p for p in pairs if not is_clear(p)), key=order)
    lines = []
    k = 0
    for title, group in (("Clearly matched", clear), ("Unclearly matched", unclear)):
        lines.append(f"{title}: {len(group)}")
        for p in group:
            k += 1
            lines.append(f"  {k})  GEN: {p.gen_question or p.gen_id}")
            lines.append(f"     GOLD: {p.gold_question or p.gold_id}  SIM: {p.cosine:.3f}")
            lines.append(f"     JUDGED: {p.judged.value if p.judged else ''}".rstrip())
    if unmatched:
        lines.append(f"Unmatched gold: {len(unmatched)}")
        lines.extend(f"  - {g}" for g in unmatched)
    return "\n".join(lines) + "\n"


def write_alignment(out_dir, pairs: Sequence[MatchPair], threshold_clear: float, unmatched: Sequence[str] = ()) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "alignment.txt", alignment_report(pairs, threshold_clear, unmatched))
    write_jsonl(out / "alignment.jsonl", [p.to_record() for p in sorted(pairs, key=lambda p: (-p.cosine, p.gold_id))])
