"""End-to-end orchestration: generation with fingerprinted, resumable stage
outputs; evaluation; and leaderboard comparison."""

from __future__ import annotations

import json
import logging
import time
import urllib.parse
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from . import rankstats
from .clusterstage import ParaphraseEdge, run_stage2a
from .config import PROVIDER_STAGES, PipelineConfig
from .evalharness import Leaderboard, MissingPolicy, build_leaderboard, judge_reports, write_leaderboard_csv
from .genstage import DocSummary, run_stage1
from .io import (
    atomic_write_text,
    banks_from_records,
    bank_records,
    read_documents,
    read_jsonl,
    read_rankings,
    read_topics,
    write_judgments,
    write_jsonl,
    write_scores_csv,
)
from .model import (
    CandidateNugget,
    ContractError,
    Diagnostics,
    Document,
    JudgmentSet,
    NuggetBank,
    QANugget,
    QualityVector,
    Report,
    RetrievalRanking,
    SelectionMethod,
    Topic,
    audit_bank,
    fingerprint,
)
from .providers import (
    ChatClient,
    EmbedClient,
    HashingEmbedder,
    MockChat,
    ParseError,
    ProviderConfig,
    ProviderError,
    ScriptedResponder,
    build_chat,
    build_embedder,
)
from .providers.templates import template_versions
from .refinestage import UninformativePattern, run_stage2b
from .selectstage import SvmModel, TrainingError, score_criteria, select
from .selectstage.criteria import COMPLEXITY_METHOD, READING_LEVEL_METHOD
from .concurrency import parallel_map

log = logging.getLogger(__name__)

STAGE_FILES = {
    "stage1": ("summaries", "candidates"),
    "stage2a": ("edges", "clusters"),
    "stage2b": ("refined",),
    "stage3": ("criteria",),
}


def topic_dirname(topic_id: str) -> str:
    return urllib.parse.quote(topic_id, safe="")


# -- providers ------------------------------------------------------------------


class Providers:
    """One chat client per distinct provider config, shared across stages."""

    def __init__(self, config: PipelineConfig, dry_run: bool = False):
        self.dry_run = dry_run
        self._chat: dict[str, ChatClient] = {}
        self._by_stage: dict[str, ChatClient] = {}
        for stage in PROVIDER_STAGES:
            if stage == "embed":
                continue
            pc = config.provider(stage)
            key = json.dumps(pc.to_record(), sort_keys=True)
            if key not in self._chat:
                self._chat[key] = self._make_chat(pc)
            self._by_stage[stage] = self._chat[key]
        self.embedder = self._make_embed(config.provider("embed"))

    def _make_chat(self, pc: ProviderConfig) -> ChatClient:
        if self.dry_run:
            # stand-in responses let later stages see realistic volumes
            stub = replace(pc, cache_dir=None, fail_rate=0.0)
            return ChatClient(stub, MockChat(responder=ScriptedResponder()), sleep=lambda s: None)
        if pc.kind == "http_embed":
            raise ContractError("an embedding provider cannot serve chat stages")
        return build_chat(pc)

    def _make_embed(self, pc: ProviderConfig) -> EmbedClient:
        if self.dry_run:
            return EmbedClient(replace(pc, cache_dir=None), HashingEmbedder(pc.embed_dim))
        if pc.kind == "http_chat":
            raise ContractError("a chat provider cannot serve embeddings")
        return build_embedder(pc)

    def chat(self, stage: str) -> ChatClient:
        return self._by_stage[stage]

    def clients(self) -> list[ChatClient]:
        """Distinct chat clients, one per provider config."""
        return list(self._chat.values())

    def counts(self) -> dict[str, int]:
        clients = list(self._chat.values())
        return {
            "chat_calls": sum(c.calls for c in clients),
            "chat_cache_hits": sum(c.cache_hits for c in clients),
            "chat_failures": sum(c.failures for c in clients),
            "embed_calls": self.embedder.calls,
        }


# -- stage store ------------------------------------------------------------------


class StageStore:
    """Per-topic intermediate files plus ``stages.json`` mapping stage -> fingerprint."""

    def __init__(self, root: Path, enabled: bool = True):
        self.root = root
        self.enabled = enabled
        self._index_path = root / "stages.json"

    def _index(self) -> dict:
        if not self._index_path.exists():
            return {}
        return json.loads(self._index_path.read_text(encoding="utf-8"))

    def load(self, stage: str, fp: str) -> dict[str, list[dict]] | None:
        if not self.enabled or self._index().get(stage) != fp:
            return None
        out = {}
        for name in STAGE_FILES[stage]:
            path = self.root / f"{name}.jsonl"
            if not path.exists():
                return None
            out[name] = read_jsonl(path)
        return out

    def save(self, stage: str, fp: str, files: Mapping[str, Sequence[Mapping]]) -> None:
        if not self.enabled:
            return
        for name in STAGE_FILES[stage]:
            write_jsonl(self.root / f"{name}.jsonl", files[name])
        index = self._index()
        index[stage] = fp
        atomic_write_text(self._index_path, json.dumps(index, indent=2, sort_keys=True) + "\n")


# -- manifest ---------------------------------------------------------------------


COUNT_KEYS = ("documents", "candidates", "edges", "clusters", "refined", "selected")


@dataclass
class RunManifest:
    started: str
    config_fingerprint: str
    method: str
    finished: str = ""
    counts: dict[str, dict[str, int]] = field(default_factory=dict)
    reused: dict[str, list[str]] = field(default_factory=dict)
    failed_topics: dict[str, str] = field(default_factory=dict)
    diagnostics: dict[str, int] = field(default_factory=dict)
    provider_calls: dict[str, int] = field(default_factory=dict)
    cap: int = 20

    def audit(self) -> list[str]:
        problems = []
        for t, c in self.counts.items():
            chain = [c.get(k) for k in ("candidates", "clusters", "refined", "selected") if k in c]
            if any(a < b for a, b in zip(chain, chain[1:])):
                problems.append(f"{t}: counts increase along the pipeline {chain}")
            if "selected" in c and c["selected"] > min(self.cap, c.get("refined", c["selected"])):
                problems.append(f"{t}: selected {c['selected']} exceeds min(cap, refined)")
        return problems

    def to_record(self) -> dict:
        return {
            "started": self.started,
            "finished": self.finished,
            "config_fingerprint": self.config_fingerprint,
            "method": self.method,
            "cap": self.cap,
            "counts": dict(sorted(self.counts.items())),
            "reused": dict(sorted(self.reused.items())),
            "failed_topics": dict(sorted(self.failed_topics.items())),
            "diagnostics": self.diagnostics,
            "provider_calls": self.provider_calls,
        }

    def write(self, path: Path) -> None:
        atomic_write_text(path, json.dumps(self.to_record(), indent=2) + "\n")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


# -- generation ---------------------------------------------------------------------


@dataclass
class Collection:
    topics: list[Topic]
    documents: dict[str, Document]
    rankings: list[RetrievalRanking]

    @classmethod
    def load(cls, config: PipelineConfig) -> "Collection":
        return cls(
            read_topics(config.paths.topics),
            {d.doc_id: d for d in read_documents(config.paths.documents)},
            read_rankings(config.paths.ranking),
        )


@dataclass
class GenerateResult:
    banks: list[NuggetBank]
    manifest: RunManifest
    diagnostics: Diagnostics

    @property
    def exit_code(self) -> int:
        return 1 if self.manifest.failed_topics else 0


def _stage1_fp(topic: Topic, coll: Collection, config: PipelineConfig) -> str:
    ranking = next((r for r in coll.rankings if r.topic_id == topic.topic_id), None)
    entries = ranking.top_k(config.stage1.top_k_docs) if ranking else ()
    docs = [coll.documents[e.doc_id].to_record() for e in entries if e.doc_id in coll.documents]
    tv = template_versions()
    return fingerprint(
        {
            "stage": "stage1",
            "topic": topic.to_record(),
            "ranking": [[e.doc_id, e.rank] for e in entries],
            "documents": docs,
            "config": config.stage1.to_record(),
            "provider": config.provider("stage1").identity(),
            "templates": [tv["summarize"], tv["generate_qa"]],
        }
    )


def _pattern(config: PipelineConfig) -> UninformativePattern:
    f = config.paths.uninformative_pattern_file
    return UninformativePattern.from_file(f) if f else UninformativePattern.default()


def _load_model(config: PipelineConfig) -> SvmModel | None:
    if config.selection.method is not SelectionMethod.DOGMATIQ:
        return None
    if config.paths.svm_model is None:
        raise ContractError("the dogmatiq method needs paths.svm_model")
    return SvmModel.load(config.paths.svm_model)


def generate_topic(
    topic: Topic,
    coll: Collection,
    config: PipelineConfig,
    providers: Providers,
    store: StageStore,
    diagnostics: Diagnostics,
    model: SvmModel | None,
    stage1_only: bool = False,
) -> tuple[NuggetBank | None, dict[str, int], list[str]]:
    par = config.parallelism
    counts: dict[str, int] = {}
    reused: list[str] = []
    tv = template_versions()

    fp1 = _stage1_fp(topic, coll, config)
    cached = store.load("stage1", fp1)
    if cached is not None:
        summaries = [DocSummary.from_record(r) for r in cached["summaries"]]
        candidates = [CandidateNugget.from_record(r) for r in cached["candidates"]]
        reused.append("stage1")
    else:
        candidates, summaries = run_stage1(
            topic, coll.rankings, coll.documents, config.stage1, providers.chat("stage1"), diagnostics, par
        )
        store.save(
            "stage1", fp1, {"summaries": [s.to_record() for s in summaries], "candidates": [c.to_record() for c in candidates]}
        )
    counts["documents"] = len(summaries)
    counts["candidates"] = len(candidates)
    if stage1_only:
        return None, counts, reused

    fp2a = fingerprint(
        {
            "stage": "stage2a",
            "upstream": fp1,
            "config": config.cluster.to_record(),
            "embed": config.provider("embed").identity(),
            "provider": config.provider("stage2a").identity() if config.cluster.verify_with_llm else None,
            "templates": [tv["verify_paraphrase"]],
        }
    )
    cached = store.load("stage2a", fp2a)
    if cached is not None:
        merged = [QANugget.from_record(r) for r in cached["clusters"]]
        edges = [ParaphraseEdge.from_record(r) for r in cached["edges"]]
        reused.append("stage2a")
    else:
        merged, all_edges, kept = run_stage2a(
            candidates, config.cluster, providers.embedder, providers.chat("stage2a"), diagnostics, par
        )
        kept_keys = {(e.nugget_id_a, e.nugget_id_b) for e in kept}
        edges = [replace(e, verified=(e.nugget_id_a, e.nugget_id_b) in kept_keys) for e in all_edges]
        store.save("stage2a", fp2a, {"edges": [e.to_record() for e in edges], "clusters": [m.to_record() for m in merged]})
    counts["edges"] = sum(e.verified for e in edges)
    counts["clusters"] = len(merged)

    pattern = _pattern(config)
    fp2b = fingerprint(
        {
            "stage": "stage2b",
            "upstream": fp2a,
            "pattern": pattern.pattern,
            "provider": config.provider("stage2b").identity(),
            "templates": [tv["canonical_question"], tv["validate_answers"], tv["assign_aggregator"]],
        }
    )
    cached = store.load("stage2b", fp2b)
    if cached is not None:
        refined = [QANugget.from_record(r) for r in cached["refined"]]
        reused.append("stage2b")
    else:
        refined = run_stage2b(merged, topic, providers.chat("stage2b"), pattern, diagnostics, par)
        store.save("stage2b", fp2b, {"refined": [n.to_record() for n in refined]})
    counts["refined"] = len(refined)
    upstream = fp2b

    if model is not None:
        fp3 = fingerprint(
            {
                "stage": "stage3",
                "upstream": fp2b,
                "provider": config.provider("stage3").identity(),
                "templates": sorted((k, v) for k, v in tv.items() if k.startswith("criterion_")),
                "programmatic": [READING_LEVEL_METHOD, COMPLEXITY_METHOD],
            }
        )
        cached = store.load("stage3", fp3)
        if cached is not None:
            vecs = {r["nugget_id"]: QualityVector.from_record(r["criteria"]) for r in cached["criteria"]}
            reused.append("stage3")
        else:
            client = providers.chat("stage3")
            vecs_list = [score_criteria(n, topic, client, diagnostics, par) for n in refined]
            vecs = {n.nugget_id: v for n, v in zip(refined, vecs_list)}
            store.save(
                "stage3",
                fp3,
                {
                    "criteria": [
                        {"topic_id": topic.topic_id, "nugget_id": n.nugget_id, "criteria": vecs[n.nugget_id].to_record()}
                        for n in refined
                    ]
                },
            )
        refined = [replace(n, provenance=replace(n.provenance, criteria=vecs[n.nugget_id])) for n in refined]
        upstream = fp3

    if not refined:
        raise ContractError(f"topic {topic.topic_id}: no nuggets survived refinement")
    sel = config.selection
    bank_fp = fingerprint(
        {"upstream": upstream, "selection": sel.to_record(), "model": model.training_fingerprint if model else None}
    )
    bank = select(refined, sel, model=model, config_fingerprint=bank_fp)
    problems = audit_bank(bank)
    if problems:
        raise ContractError(f"bank audit failed for {topic.topic_id}: {problems}")
    counts["selected"] = len(bank.selected)
    return bank, counts, reused


def bank_path(out_dir: Path, method: SelectionMethod, topic_id: str) -> Path:
    return out_dir / "banks" / method.value / f"{topic_dirname(topic_id)}.jsonl"


def cmd_generate(
    config: PipelineConfig,
    dry_run: bool = False,
    stage1_only: bool = False,
    topic_ids: Sequence[str] | None = None,
    providers: Providers | None = None,
) -> GenerateResult:
    """Run stages 1 -> 2A -> 2B -> 3 for each topic.

    Stage outputs are reused when their fingerprint matches; a failing topic
    is recorded and the rest continue. ``dry_run`` answers with stand-in
    providers, writes nothing and reports the calls that would be made.
    """
    coll = Collection.load(config)
    diagnostics = Diagnostics()
    providers = providers or Providers(config, dry_run=dry_run)
    model = None if stage1_only else _load_model(config)
    out_dir = config.paths.output_dir
    manifest = RunManifest(_now(), config.fingerprint, config.selection.method.value, cap=config.selection.cap)
    topics = [t for t in coll.topics if topic_ids is None or t.topic_id in topic_ids]

    def one(topic: Topic):
        store = StageStore(out_dir / "work" / topic_dirname(topic.topic_id), enabled=not dry_run)
        try:
            return topic, generate_topic(topic, coll, config, providers, store, diagnostics, model, stage1_only), None
        except (ContractError, ProviderError, ParseError, TrainingError) as exc:
            diagnostics.add("generate", "topic_failed", topic.topic_id, str(exc))
            return topic, None, str(exc)

    results = parallel_map(one, topics, config.parallelism)
    banks = []
    for topic, res, err in results:
        if err is not None:
            manifest.failed_topics[topic.topic_id] = err
            continue
        bank, counts, reused = res
        manifest.counts[topic.topic_id] = counts
        manifest.reused[topic.topic_id] = reused
        if bank is not None:
            banks.append(bank)
            if not dry_run:
                write_jsonl(bank_path(out_dir, config.selection.method, topic.topic_id), bank_records(bank))
    manifest.diagnostics = diagnostics.summary()
    manifest.provider_calls = providers.counts()
    manifest.finished = _now()
    problems = manifest.audit()
    if problems:
        raise ContractError(f"manifest audit failed: {problems}")
    if not dry_run:
        write_jsonl(out_dir / f"diagnostics.{config.selection.method.value}.jsonl", _diag_records(diagnostics))
        manifest.write(out_dir / f"manifest.{config.selection.method.value}.json")
    return GenerateResult(banks, manifest, diagnostics)


def _diag_records(diagnostics: Diagnostics) -> list[dict]:
    return [{"stage": d.stage, "kind": d.kind, "item": d.item, "message": d.message} for d in diagnostics.sorted()]


def load_banks(path: str | Path) -> dict[str, NuggetBank]:
    """Banks from one file or every ``*.jsonl`` in a directory, keyed by topic."""
    path = Path(path)
    files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
    records = [r for f in files for r in read_jsonl(f)]
    out: dict[str, NuggetBank] = {}
    for b in banks_from_records(records):
        if b.topic_id in out:
            raise ContractError(f"two banks for topic {b.topic_id}")
        out[b.topic_id] = b
    if not out:
        raise ContractError(f"no banks found at {path}")
    return out


def select_from_store(config: PipelineConfig, topic_ids: Sequence[str] | None = None) -> list[NuggetBank]:
    """Re-run only selection over refined nuggets already on disk."""
    model = _load_model(config)
    out = []
    for topic in read_topics(config.paths.topics):
        if topic_ids is not None and topic.topic_id not in topic_ids:
            continue
        root = config.paths.output_dir / "work" / topic_dirname(topic.topic_id)
        refined_path = root / "refined.jsonl"
        if not refined_path.exists():
            raise ContractError(f"no refined nuggets for {topic.topic_id}; run generate first")
        refined = [QANugget.from_record(r) for r in read_jsonl(refined_path)]
        if model is not None:
            crit_path = root / "criteria.jsonl"
            if not crit_path.exists():
                raise ContractError(f"no criteria for {topic.topic_id}; run generate with the dogmatiq method")
            vecs = {r["nugget_id"]: QualityVector.from_record(r["criteria"]) for r in read_jsonl(crit_path)}
            refined = [replace(n, provenance=replace(n.provenance, criteria=vecs.get(n.nugget_id))) for n in refined]
        index = json.loads((root / "stages.json").read_text(encoding="utf-8"))
        upstream = index.get("stage3" if model else "stage2b", "")
        bank_fp = fingerprint(
            {
                "upstream": upstream,
                "selection": config.selection.to_record(),
                "model": model.training_fingerprint if model else None,
            }
        )
        bank = select(refined, config.selection, model=model, config_fingerprint=bank_fp)
        problems = audit_bank(bank)
        if problems:
            raise ContractError(f"bank audit failed for {topic.topic_id}: {problems}")
        write_jsonl(bank_path(config.paths.output_dir, config.selection.method, topic.topic_id), bank_records(bank))
        out.append(bank)
    return out


# -- evaluation -------------------------------------------------------------------


@dataclass
class EvaluateResult:
    leaderboard: Leaderboard
    judgments: JudgmentSet
    diagnostics: Diagnostics


def cmd_evaluate(
    config: PipelineConfig,
    banks: Mapping[str, NuggetBank],
    reports: Sequence[Report],
    out_dir: str | Path,
    judgments: JudgmentSet | None = None,
    label: str = "",
    missing_policy: MissingPolicy | str | None = None,
    providers: Providers | None = None,
) -> EvaluateResult:
    """Judge (unless ``judgments`` is given), score and write the leaderboard.

    Writes ``judgments.jsonl``, ``scores.csv`` and ``leaderboard.csv`` under
    ``out_dir``.
    """
    diagnostics = Diagnostics()
    if judgments is None:
        providers = providers or Providers(config)
        judgments = judge_reports(
            reports, banks, providers.chat("judge"), "", diagnostics, config.parallelism
        )
    policy = MissingPolicy(missing_policy or config.missing_policy)
    board = build_leaderboard(reports, banks, judgments, policy, label, diagnostics=diagnostics)
    problems = board.audit()
    if problems:
        raise ContractError(f"leaderboard audit failed: {problems}")
    out = Path(out_dir)
    write_judgments(out / "judgments.jsonl", judgments)
    write_scores_csv(out / "scores.csv", board.score_matrix())
    write_leaderboard_csv(out / "leaderboard.csv", board)
    write_jsonl(out / "diagnostics.jsonl", _diag_records(diagnostics))
    return EvaluateResult(board, judgments, diagnostics)


# -- comparison ---------------------------------------------------------------------


def correlation_summary(report: rankstats.CorrelationReport) -> str:
    return (
        f"{report.candidate_label} vs {report.reference_label} (n_runs={report.n_runs}): "
        f"rho={report.rho:.3f} tau={report.tau:.3f} weighted_tau={report.weighted_tau:.3f} wpa={report.wpa:.3f}\n"
    )


def subset_summary(report: rankstats.SubsetReport) -> str:
    lines = [f"{'metric':<14}{'subset':>10}{'full':>10}{'delta':>10}"]
    for m in rankstats.METRICS:
        lines.append(f"{m:<14}{getattr(report.subset, m):>10.3f}{getattr(report.full, m):>10.3f}{report.deltas[m]:>+10.3f}")
    return "\n".join(lines) + "\n"


def cmd_compare(
    config: PipelineConfig,
    reference: Leaderboard,
    candidates: Sequence[Leaderboard],
    out_dir: str | Path,
    subset_runs: Sequence[str] | None = None,
    heatmap: bool = False,
    scatter_level: str | None = None,
) -> str:
    """Correlate each candidate with the reference and write CSV + summary text."""
    if not candidates:
        raise ContractError("need at least two leaderboards")
    out = Path(out_dir)
    reports = [rankstats.correlation_report(reference, c, config.wpa) for c in candidates]
    rankstats.write_correlation_csv(out / "correlation.csv", reports)
    text = "".join(correlation_summary(r) for r in reports)
    if subset_runs is not None:
        for c in candidates:
            sub = rankstats.subset_report(reference, c, subset_runs, config.wpa)
            rankstats.write_subset_csv(out / f"subset.{c.label}.csv", sub)
            text += f"\nsubset of {sub.subset.n_runs} runs, {c.label} vs {reference.label}\n" + subset_summary(sub)
    if heatmap:
        rankstats.write_heatmap_csv(out / "heatmap.csv", rankstats.cross_set_matrix([reference, *candidates]))
    if scatter_level is not None:
        for c in candidates:
            rows = rankstats.scatter_data(reference, c, scatter_level)
            rankstats.write_scatter_csv(out / f"scatter.{scatter_level}.{c.label}.csv", rows)
    atomic_write_text(out / "summary.txt", text)
    return text
