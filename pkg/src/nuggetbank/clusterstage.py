"""Stage 2A: paraphrase edges from embeddings + LLM verification, clusters as
connected components, and answer merging within each cluster."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .concurrency import parallel_map
from .model import (
    Aggregator,
    Answer,
    CandidateNugget,
    ContractError,
    Diagnostics,
    Provenance,
    QANugget,
    grounding_docs,
)
from .providers import ChatClient, ChatRequest, EmbedClient, ParseError, ProviderError, ask

STAGE = "stage2a"


@dataclass(frozen=True)
class ParaphraseEdge:
    nugget_id_a: str
    nugget_id_b: str
    cosine: float
    verified: bool = False

    def __post_init__(self):
        if not self.nugget_id_a < self.nugget_id_b:
            raise ContractError("edge endpoints must be distinct and in lexicographic order")

    def to_record(self) -> dict:
        return {
            "nugget_id_a": self.nugget_id_a,
            "nugget_id_b": self.nugget_id_b,
            "cosine": self.cosine,
            "verified": self.verified,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "ParaphraseEdge":
        return cls(str(rec["nugget_id_a"]), str(rec["nugget_id_b"]), float(rec["cosine"]), bool(rec["verified"]))


@dataclass(frozen=True)
class ClusterConfig:
    cosine_threshold: float = 0.9
    verify_with_llm: bool = True

    def __post_init__(self):
        if not 0.0 < self.cosine_threshold <= 1.0:
            raise ValueError("cosine_threshold must be in (0, 1]")

    def to_record(self) -> dict:
        return {"cosine_threshold": self.cosine_threshold, "verify_with_llm": self.verify_with_llm}


def make_edge(id_a: str, id_b: str, cosine: float, verified: bool = False) -> ParaphraseEdge:
    a, b = sorted((id_a, id_b))
    return ParaphraseEdge(a, b, cosine, verified)


def candidate_pairs(
    nugget_ids: Sequence[str],
    questions: Sequence[str],
    embedder: EmbedClient,
    threshold: float = 0.9,
) -> list[ParaphraseEdge]:
    """All pairs whose question cosine strictly exceeds ``threshold``."""
    if len(nugget_ids) != len(questions) or not questions:
        raise ContractError("need one or more questions, one per nugget id")
    if len(set(nugget_ids)) != len(nugget_ids):
        raise ContractError("nugget ids must be unique")
    vecs = embedder.embed(list(questions))
    sims = np.clip(vecs @ vecs.T, -1.0, 1.0)
    ii, jj = np.nonzero(np.triu(sims > threshold, k=1))
    edges = [make_edge(nugget_ids[i], nugget_ids[j], float(sims[i, j])) for i, j in zip(ii, jj)]
    return sorted(edges, key=lambda e: (e.nugget_id_a, e.nugget_id_b))


def verify_pairs(
    edges: Sequence[ParaphraseEdge],
    questions: Mapping[str, str],
    client: ChatClient,
    diagnostics: Diagnostics | None = None,
    parallelism: int = 1,
) -> list[ParaphraseEdge]:
    """Keep the edges the judge calls paraphrases; anything unclear is dropped."""
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()

    def judge(edge: ParaphraseEdge) -> bool:
        req = ChatRequest(
            "verify_paraphrase",
            {"question_a": questions[edge.nugget_id_a], "question_b": questions[edge.nugget_id_b]},
        )
        item = f"{edge.nugget_id_a}|{edge.nugget_id_b}"
        try:
            return bool(ask(client, req))
        except ProviderError as exc:
            diagnostics.add(STAGE, "provider_error", item, f"verify_paraphrase: {exc}")
        except ParseError as exc:
            diagnostics.add(STAGE, "parse_error", item, f"verify_paraphrase: {exc}")
        return False

    keep = parallel_map(judge, edges, parallelism)
    return [
        ParaphraseEdge(e.nugget_id_a, e.nugget_id_b, e.cosine, True) for e, ok in zip(edges, keep) if ok
    ]


class DisjointSet:
    """Union-find over string keys with path halving and union by size."""

    def __init__(self, items: Iterable[str]):
        self.parent = {x: x for x in items}
        self.size = {x: 1 for x in self.parent}

    def find(self, x: str) -> str:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]

    def groups(self) -> list[list[str]]:
        out: dict[str, list[str]] = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return sorted((sorted(g) for g in out.values()), key=lambda g: g[0])


def connected_components(nugget_ids: Iterable[str], edges: Iterable[ParaphraseEdge | tuple[str, str]]) -> list[list[str]]:
    ds = DisjointSet(nugget_ids)
    for e in edges:
        a, b = (e.nugget_id_a, e.nugget_id_b) if isinstance(e, ParaphraseEdge) else e
        if a not in ds.parent or b not in ds.parent:
            raise ContractError(f"edge ({a}, {b}) references an unknown nugget")
        ds.union(a, b)
    return ds.groups()


def normalize_answer(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().casefold()


def merge_answers(answers: Iterable[Answer]) -> list[Answer]:
    """Concatenate, merging answers whose normalized text is identical."""
    order: list[str] = []
    texts: dict[str, str] = {}
    docs: dict[str, set[str]] = {}
    for a in answers:
        key = normalize_answer(a.text)
        if key not in texts:
            order.append(key)
            texts[key] = a.text
            docs[key] = set()
        docs[key].update(a.doc_ids)
    return [Answer(texts[k], tuple(docs[k])) for k in order]


def merge_cluster(cluster: Sequence[CandidateNugget]) -> QANugget:
    if not cluster:
        raise ContractError("cannot merge an empty cluster")
    members = sorted(cluster, key=lambda n: n.nugget_id)
    answers = merge_answers(a for n in members for a in n.answers)
    head = members[0]
    return QANugget(
        nugget_id=head.nugget_id,
        topic_id=head.topic_id,
        question=head.question,
        aggregator=Aggregator.OR,
        answers=tuple(answers),
        provenance=Provenance(
            member_question_texts=tuple(n.question for n in members),
            cluster_size=len(members),
            grounding_doc_count=len(grounding_docs(answers)),
        ),
    )


def run_stage2a(
    candidates: Sequence[CandidateNugget],
    config: ClusterConfig,
    embedder: EmbedClient,
    client: ChatClient | None,
    diagnostics: Diagnostics | None = None,
    parallelism: int = 1,
) -> tuple[list[QANugget], list[ParaphraseEdge], list[ParaphraseEdge]]:
    """Returns ``(merged nuggets, all candidate edges, edges kept)``."""
    if not candidates:
        return [], [], []
    by_id = {n.nugget_id: n for n in candidates}
    ids = sorted(by_id)
    edges = candidate_pairs(ids, [by_id[i].question for i in ids], embedder, config.cosine_threshold)
    if config.verify_with_llm:
        if client is None:
            raise ContractError("LLM verification requested without a chat client")
        kept = verify_pairs(edges, {i: by_id[i].question for i in ids}, client, diagnostics, parallelism)
    else:
        kept = list(edges)
    clusters = connected_components(ids, kept)
    merged = [merge_cluster([by_id[i] for i in c]) for c in clusters]
    return sorted(merged, key=lambda n: n.nugget_id), edges, kept
