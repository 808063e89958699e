"""Line-delimited record files and the CSV tables.

All writers are atomic (temp file + rename) and produce byte-stable output:
JSON with fixed key order and no ASCII escaping, floats in shortest
round-trip form, ``\\n`` line endings.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .model import (
    Aggregator,
    CandidateNugget,
    ContractError,
    Document,
    JudgmentSet,
    NuggetBank,
    QANugget,
    QualityVector,
    Report,
    RetrievalRanking,
    ScoreMatrix,
    SelectionMethod,
    Topic,
    Verdict,
    fold_aggregator,
)


class FormatError(ValueError):
    """A record file could not be parsed."""


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_record(rec: Mapping) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: str | os.PathLike, records: Iterable[Mapping]) -> None:
    atomic_write_text(path, "".join(dumps_record(r) + "\n" for r in records))


def iter_jsonl(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc


def read_jsonl(path: str | os.PathLike) -> list[dict]:
    return [rec for _, rec in iter_jsonl(path)]


def _load(path, factory):
    out = []
    for lineno, rec in iter_jsonl(path):
        try:
            out.append(factory(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc!r}") from exc
    return out


def read_topics(path) -> list[Topic]:
    return _load(path, Topic.from_record)


def read_documents(path) -> list[Document]:
    return _load(path, Document.from_record)


def read_rankings(path) -> list[RetrievalRanking]:
    return _load(path, RetrievalRanking.from_record)


def read_reports(path) -> list[Report]:
    return _load(path, Report.from_record)


def read_candidates(path) -> list[CandidateNugget]:
    return _load(path, CandidateNugget.from_record)


def read_qa_nuggets(path) -> list[QANugget]:
    return _load(path, QANugget.from_record)


# -- nugget banks ---------------------------------------------------------------


def bank_records(bank: NuggetBank) -> list[dict]:
    recs = [bank.header_record()]
    for n in bank.candidates:
        recs.append({"record": "nugget", **n.to_record()})
    return recs


def write_banks(path, banks: Sequence[NuggetBank]) -> None:
    write_jsonl(path, [r for b in banks for r in bank_records(b)])


def banks_from_records(records: Iterable[Mapping]) -> list[NuggetBank]:
    banks: list[NuggetBank] = []
    header: Mapping | None = None
    nuggets: list[QANugget] = []

    def flush():
        if header is None:
            return
        by_id = {n.nugget_id: n for n in nuggets}
        try:
            selected = tuple(by_id[i] for i in header["selected"])
        except KeyError as exc:
            raise FormatError(f"bank {header['topic_id']}: selected nugget {exc} missing") from None
        banks.append(
            NuggetBank(
                topic_id=str(header["topic_id"]),
                selected=selected,
                candidates=tuple(nuggets),
                method=SelectionMethod(header["method"]),
                config_fingerprint=str(header["config_fingerprint"]),
                cap=int(header.get("cap", 20)),
            )
        )

    for rec in records:
        kind = rec.get("record")
        if kind == "bank":
            flush()
            header, nuggets = rec, []
        elif kind == "nugget":
            if header is None:
                raise FormatError("nugget line before any bank header")
            body = {k: v for k, v in rec.items() if k != "record"}
            nuggets.append(QANugget.from_record(body))
        else:
            raise FormatError(f"unknown record kind {kind!r}")
    flush()
    return banks


def read_banks(path) -> list[NuggetBank]:
    return banks_from_records(read_jsonl(path))


# -- judgments ------------------------------------------------------------------


def write_judgments(path, judgments: JudgmentSet) -> None:
    write_jsonl(path, judgments.records())


def import_judgments(
    path,
    format: str = "native",
    banks: Sequence[NuggetBank] = (),
    max_bad_fraction: float = 0.10,
    diagnostics=None,
) -> JudgmentSet:
    """Read judgments from ``native`` or ``argue_export`` rows.

    ``addressed`` is recomputed from ``answer_verdicts`` when both the
    verdicts and the nugget's aggregator (via ``banks``) are known, and
    trusted otherwise. Malformed rows are skipped with a diagnostic; more than
    ``max_bad_fraction`` of them is fatal.
    """
    aggregators: dict[tuple[str, str], tuple[Aggregator, int]] = {}
    for b in banks:
        for n in b.candidates:
            aggregators[(n.topic_id, n.nugget_id)] = (n.aggregator, len(n.answers))

    entries: dict[tuple[str, str, str], Verdict] = {}
    label = "imported"
    bad = total = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            total += 1
            try:
                rec = json.loads(line)
                if format == "native":
                    key = (str(rec["run_id"]), str(rec["topic_id"]), str(rec["nugget_id"]))
                    verdicts = tuple(_as_bool(v) for v in rec.get("answer_verdicts") or ())
                    addressed = rec.get("addressed")
                    label = str(rec.get("judge_label", label))
                elif format == "argue_export":
                    key = (str(rec["run"]), str(rec["topic"]), str(rec["question_id"]))
                    verdicts = tuple(_as_bool(v) for v in rec.get("answer_matches") or ())
                    addressed = rec.get("nugget_match")
                    label = str(rec.get("judge", label))
                else:
                    raise ValueError(f"unknown judgment format {format!r}")
                agg = aggregators.get((key[1], key[2]))
                if verdicts and agg is not None:
                    if len(verdicts) != agg[1]:
                        raise ValueError("verdict count does not match the nugget's answers")
                    addressed = fold_aggregator(agg[0], verdicts)
                elif addressed is None:
                    raise ValueError("addressed missing and no aggregator known to recompute it")
                entries[key] = Verdict(verdicts, _as_bool(addressed))
            except ValueError as exc:
                if "unknown judgment format" in str(exc):
                    raise
                bad += 1
                if diagnostics is not None:
                    diagnostics.add("import", "malformed_row", f"{path}:{lineno}", str(exc))
            except (KeyError, TypeError) as exc:
                bad += 1
                if diagnostics is not None:
                    diagnostics.add("import", "malformed_row", f"{path}:{lineno}", repr(exc))
    if total and bad / total > max_bad_fraction:
        raise FormatError(f"{bad} of {total} judgment rows malformed in {path}")
    return JudgmentSet(label, entries)


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)) and v in (0, 1):
        return bool(v)
    if isinstance(v, str) and v.strip().lower() in ("true", "false", "yes", "no", "1", "0"):
        return v.strip().lower() in ("true", "yes", "1")
    raise ValueError(f"not a boolean: {v!r}")


# -- criteria dumps -------------------------------------------------------------


def write_criteria(path, rows: Iterable[tuple[str, str, QualityVector]]) -> None:
    write_jsonl(
        path,
        ({"topic_id": t, "nugget_id": n, "criteria": q.to_record()} for t, n, q in rows),
    )


def read_criteria(path) -> list[tuple[str, str, QualityVector]]:
    return _load(
        path,
        lambda r: (str(r["topic_id"]), str(r["nugget_id"]), QualityVector.from_record(r["criteria"])),
    )


# -- CSV tables -----------------------------------------------------------------


def fmt_float(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def _csv_text(rows: Iterable[Sequence[str]]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def scores_csv_text(matrix: ScoreMatrix) -> str:
    rows = [["run_id", *matrix.topic_ids, "macro"]]
    for run, vals in zip(matrix.run_ids, matrix.scores):
        rows.append([run, *(fmt_float(v) for v in vals), fmt_float(matrix.macro(run))])
    return _csv_text(rows)


def write_scores_csv(path, matrix: ScoreMatrix) -> None:
    atomic_write_text(path, scores_csv_text(matrix))


def read_scores_csv(path, label: str = "") -> ScoreMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "run_id" or rows[0][-1] != "macro":
        raise FormatError(f"{path}: header must be run_id,<topic_id...>,macro")
    topics = tuple(rows[0][1:-1])
    runs, scores = [], []
    for r in rows[1:]:
        if len(r) != len(topics) + 2:
            raise FormatError(f"{path}: row {r[:1]} has {len(r)} cells")
        runs.append(r[0])
        scores.append(tuple(float(c) if c != "" else None for c in r[1:-1]))
    return ScoreMatrix(tuple(runs), topics, tuple(scores), label or Path(path).stem)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    def cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    atomic_write_text(path, _csv_text([list(header), *([cell(v) for v in r] for r in rows)]))


def check_unique(ids: Iterable[str], what: str) -> None:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            raise ContractError(f"duplicate {what} {i!r}")
        seen.add(i)
