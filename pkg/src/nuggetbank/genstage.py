"""Stage 1: per-document summaries, then grounded English QA pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .concurrency import parallel_map
from .model import (
    Answer,
    CandidateNugget,
    ContractError,
    Diagnostics,
    Document,
    RetrievalRanking,
    Topic,
)
from .providers import ChatClient, ChatRequest, ParseError, ProviderError, ask

STAGE = "stage1"


@dataclass(frozen=True)
class DocSummary:
    doc_id: str
    lang: str
    summary_text: str

    def to_record(self) -> dict:
        return {"doc_id": self.doc_id, "lang": self.lang, "summary_text": self.summary_text}

    @classmethod
    def from_record(cls, rec: Mapping) -> "DocSummary":
        return cls(str(rec["doc_id"]), str(rec["lang"]), str(rec["summary_text"]))


@dataclass(frozen=True)
class Stage1Config:
    top_k_docs: int = 50
    max_pairs: int = 6
    chunk_chars: int = 12000

    def __post_init__(self):
        if self.top_k_docs < 1 or self.max_pairs < 1 or self.chunk_chars < 100:
            raise ValueError("invalid stage 1 configuration")

    def to_record(self) -> dict:
        return {"top_k_docs": self.top_k_docs, "max_pairs": self.max_pairs, "chunk_chars": self.chunk_chars}


def chunk_text(text: str, max_chars: int) -> list[str]:
    """Split into contiguous pieces of at most ``max_chars``, preferring whitespace."""
    text = text.strip()
    chunks = []
    while len(text) > max_chars:
        cut = text.rfind(" ", 0, max_chars + 1)
        if cut <= 0:
            cut = max_chars
        chunks.append(text[:cut].strip())
        text = text[cut:].strip()
    if text:
        chunks.append(text)
    return chunks


def summarize(topic: Topic, document: Document, client: ChatClient, chunk_chars: int = 12000) -> DocSummary:
    """Summarize in the document's own language; long documents chunk-wise.

    Raises ProviderError / ParseError; the caller decides to skip.
    """
    if not document.text.strip():
        raise ContractError(f"document {document.doc_id} has empty text")
    parts = []
    for chunk in chunk_text(document.text, chunk_chars):
        req = ChatRequest(
            "summarize",
            {"request": topic.request_text, "lang": document.lang, "document": chunk},
        )
        parts.append(ask(client, req))
    return DocSummary(document.doc_id, document.lang, "\n".join(parts))


def generate_qa(
    topic: Topic,
    summary: DocSummary,
    client: ChatClient,
    diagnostics: Diagnostics | None = None,
    max_pairs: int = 6,
) -> list[CandidateNugget]:
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    req = ChatRequest("generate_qa", {"request": topic.request_text, "summary": summary.summary_text})
    try:
        pairs = ask(client, req)
    except ProviderError as exc:
        diagnostics.add(STAGE, "provider_error", summary.doc_id, f"generate_qa: {exc}")
        return []
    except ParseError as exc:
        diagnostics.add(STAGE, "parse_error", summary.doc_id, f"generate_qa: {exc}")
        return []
    if len(pairs) > max_pairs:
        diagnostics.add(STAGE, "truncated", summary.doc_id, f"{len(pairs)} QA pairs truncated to {max_pairs}")
        pairs = pairs[:max_pairs]
    return [
        CandidateNugget(
            nugget_id=f"{topic.topic_id}/{summary.doc_id}/{i}",
            topic_id=topic.topic_id,
            question=q,
            answers=(Answer(a, (summary.doc_id,)),),
            source_doc_id=summary.doc_id,
        )
        for i, (q, a) in enumerate(pairs, 1)
    ]


def run_stage1(
    topic: Topic,
    rankings: Sequence[RetrievalRanking],
    documents: Mapping[str, Document],
    config: Stage1Config,
    client: ChatClient,
    diagnostics: Diagnostics | None = None,
    parallelism: int = 1,
) -> tuple[list[CandidateNugget], list[DocSummary]]:
    """Summarize + generate over the top-k ranked documents of ``topic``.

    Output order is (document rank, within-document index) regardless of
    ``parallelism``.
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    ranking = next((r for r in rankings if r.topic_id == topic.topic_id), None)
    if ranking is None:
        diagnostics.add(STAGE, "no_ranking", topic.topic_id, "no retrieval ranking for topic")
        return [], []
    entries = ranking.top_k(config.top_k_docs)

    def work(entry):
        doc = documents.get(entry.doc_id)
        if doc is None:
            diagnostics.add(STAGE, "skipped", entry.doc_id, "ranked document missing from collection")
            return None, []
        try:
            summary = summarize(topic, doc, client, config.chunk_chars)
        except ContractError as exc:
            diagnostics.add(STAGE, "skipped", doc.doc_id, str(exc))
            return None, []
        except ProviderError as exc:
            diagnostics.add(STAGE, "provider_error", doc.doc_id, f"summarize: {exc}")
            return None, []
        except ParseError as exc:
            diagnostics.add(STAGE, "parse_error", doc.doc_id, f"summarize: {exc}")
            return None, []
        return summary, generate_qa(topic, summary, client, diagnostics, config.max_pairs)

    results = parallel_map(work, entries, parallelism)
    summaries = [s for s, _ in results if s is not None]
    candidates = [n for _, ns in results for n in ns]
    return candidates, summaries
