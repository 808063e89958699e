"""Nugget-recall scoring: per-answer judging, aggregator folding, per-topic
recall and macro-averaged leaderboards."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .concurrency import parallel_map
from .io import write_csv
from .model import (
    ContractError,
    Diagnostics,
    JudgmentSet,
    NuggetBank,
    QANugget,
    Report,
    ScoreMatrix,
    Verdict,
    fingerprint,
    fold_aggregator,
)
from .providers import ChatClient, ChatRequest, ParseError, ProviderError, ask

STAGE = "evaluate"


class MissingPolicy(str, enum.Enum):
    ZERO = "zero"
    SKIP = "skip"


@dataclass(frozen=True)
class LeaderboardRow:
    run_id: str
    macro_recall: float
    per_topic: Mapping[str, float]


@dataclass(frozen=True)
class Leaderboard:
    label: str
    rows: tuple[LeaderboardRow, ...]
    judged_with: str
    bank_fingerprint: str
    missing_policy: MissingPolicy = MissingPolicy.ZERO

    @property
    def run_ids(self) -> list[str]:
        return [r.run_id for r in self.rows]

    def macro(self) -> dict[str, float]:
        return {r.run_id: r.macro_recall for r in self.rows}

    def topic_ids(self) -> list[str]:
        return sorted({t for r in self.rows for t in r.per_topic})

    def score_matrix(self) -> ScoreMatrix:
        topics = self.topic_ids()
        return ScoreMatrix(
            run_ids=tuple(self.run_ids),
            topic_ids=tuple(topics),
            scores=tuple(tuple(r.per_topic.get(t) for t in topics) for r in self.rows),
            label=self.label,
        )

    def audit(self) -> list[str]:
        """Recompute every macro from ``per_topic`` and check row order."""
        problems = []
        for r in self.rows:
            vals = list(r.per_topic.values())
            expect = sum(vals) / len(vals) if vals else float("nan")
            if abs(expect - r.macro_recall) > 1e-12:
                problems.append(f"{r.run_id}: macro {r.macro_recall} != mean {expect}")
        keys = [(-r.macro_recall, r.run_id) for r in self.rows]
        if keys != sorted(keys):
            problems.append("rows not sorted by macro descending then run_id")
        return problems


def judge_nugget(
    report: Report,
    nugget: QANugget,
    client: ChatClient,
    diagnostics: Diagnostics | None = None,
) -> Verdict:
    """One judgment per answer; any failure counts as not matched."""
    if report.topic_id != nugget.topic_id:
        raise ContractError(f"report topic {report.topic_id} != nugget topic {nugget.topic_id}")
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    verdicts = []
    for idx, answer in enumerate(nugget.answers):
        req = ChatRequest(
            "judge_nugget",
            {"report": report.text, "question": nugget.question, "answer": answer.text},
            max_output_tokens=8,
        )
        item = f"{report.run_id}|{nugget.nugget_id}#{idx}"
        try:
            verdicts.append(bool(ask(client, req)))
        except ProviderError as exc:
            diagnostics.add(STAGE, "provider_error", item, str(exc))
            verdicts.append(False)
        except ParseError as exc:
            diagnostics.add(STAGE, "parse_error", item, str(exc))
            verdicts.append(False)
    return Verdict(tuple(verdicts), fold_aggregator(nugget.aggregator, verdicts))


def judge_reports(
    reports: Sequence[Report],
    banks: Mapping[str, NuggetBank],
    client: ChatClient,
    judge_label: str = "",
    diagnostics: Diagnostics | None = None,
    parallelism: int = 1,
) -> JudgmentSet:
    """Judge every selected nugget of the matching bank for every report."""
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    tasks = [(r, n) for r in reports if r.topic_id in banks for n in banks[r.topic_id].selected]
    verdicts = parallel_map(lambda t: judge_nugget(t[0], t[1], client, diagnostics), tasks, parallelism)
    entries = {(r.run_id, r.topic_id, n.nugget_id): v for (r, n), v in zip(tasks, verdicts)}
    return JudgmentSet(judge_label or client.config.model_name, entries)


def nugget_recall(report: Report, bank: NuggetBank, judgments: JudgmentSet) -> float:
    if not bank.selected:
        raise ContractError(f"bank {bank.topic_id} has no selected nuggets")
    if report.topic_id != bank.topic_id:
        raise ContractError(f"report topic {report.topic_id} != bank topic {bank.topic_id}")
    hit = 0
    for n in bank.selected:
        v = judgments.get(report.run_id, report.topic_id, n.nugget_id)
        if v is None:
            raise ContractError(f"no judgment for ({report.run_id}, {report.topic_id}, {n.nugget_id})")
        hit += bool(v.addressed)
    return hit / len(bank.selected)


def bank_fingerprint(banks: Mapping[str, NuggetBank]) -> str:
    return fingerprint({t: b.config_fingerprint for t, b in sorted(banks.items())})


def build_leaderboard(
    reports: Iterable[Report],
    banks: Mapping[str, NuggetBank],
    judgments: JudgmentSet,
    missing_policy: MissingPolicy | str = MissingPolicy.ZERO,
    label: str = "",
    run_ids: Iterable[str] | None = None,
    diagnostics: Diagnostics | None = None,
) -> Leaderboard:
    """Per-topic recall for each run, macro-averaged under ``missing_policy``.

    ``run_ids`` may list runs that submitted nothing for any bank topic; such
    runs, like any run without a judged bank topic, are excluded.
    """
    policy = MissingPolicy(missing_policy)
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    by_run: dict[str, dict[str, Report]] = {}
    for r in reports:
        by_run.setdefault(r.run_id, {})
        if r.topic_id in banks:
            if r.topic_id in by_run.setdefault(r.run_id, {}):
                raise ContractError(f"run {r.run_id} has two reports for topic {r.topic_id}")
            by_run[r.run_id][r.topic_id] = r
    for rid in run_ids or ():
        by_run.setdefault(rid, {})
    rows = []
    for run_id in sorted(by_run):
        submitted = by_run[run_id]
        if not submitted:
            diagnostics.add(STAGE, "run_excluded", run_id, "no reports for any bank topic")
            continue
        per_topic: dict[str, float] = {}
        for topic_id in sorted(banks):
            if topic_id in submitted:
                per_topic[topic_id] = nugget_recall(submitted[topic_id], banks[topic_id], judgments)
            elif policy is MissingPolicy.ZERO:
                per_topic[topic_id] = 0.0
        macro = sum(per_topic.values()) / len(per_topic)
        rows.append(LeaderboardRow(run_id, macro, per_topic))
    rows.sort(key=lambda r: (-r.macro_recall, r.run_id))
    return Leaderboard(
        label=label,
        rows=tuple(rows),
        judged_with=judgments.judge_label,
        bank_fingerprint=bank_fingerprint(banks),
        missing_policy=policy,
    )


# -- leaderboard files ----------------------------------------------------------


def write_leaderboard_csv(path, board: Leaderboard) -> None:
    """``run_id,macro,<topic_id...>``; a blank cell marks a skipped topic."""
    topics = board.topic_ids()
    write_csv(
        path,
        ["run_id", "macro", *topics],
        ([r.run_id, r.macro_recall, *(r.per_topic.get(t) for t in topics)] for r in board.rows),
    )


def read_leaderboard_csv(path, label: str = "") -> Leaderboard:
    import csv
    from pathlib import Path

    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["run_id", "macro"]:
        raise ContractError(f"{path}: header must start with run_id,macro")
    topics = rows[0][2:]
    out = []
    for r in rows[1:]:
        per_topic = {t: float(c) for t, c in zip(topics, r[2:]) if c != ""}
        out.append(LeaderboardRow(r[0], float(r[1]), per_topic))
    out.sort(key=lambda r: (-r.macro_recall, r.run_id))
    return Leaderboard(label or Path(path).stem, tuple(out), judged_with="", bank_fingerprint="")
