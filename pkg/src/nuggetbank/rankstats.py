"""Leaderboard agreement statistics.

Rank correlations use mid-ranks for ties. The signed-rank test is computed on
doubled ranks so that the exact null distribution is an integer knapsack and
small-sample p-values are exact binary fractions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .evalharness import Leaderboard, LeaderboardRow
from .io import write_csv
from .model import ContractError, ScoreMatrix


class UndefinedCorrelationError(ValueError):
    """A correlation is undefined (constant input vector)."""


class InsufficientDataError(ValueError):
    pass


def midranks(values: Sequence[float], descending: bool = False) -> np.ndarray:
    """1-based average ranks."""
    v = -np.asarray(values, dtype=np.float64) if descending else np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v), dtype=np.float64)
    sv = v[order]
    i = 0
    n = len(v)
    while i < n:
        j = i
        while j + 1 < n and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ContractError("need two equal-length vectors of length >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    return x, y


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = _check_pair(x, y)
    rx, ry = midranks(x), midranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-corrected tau-b."""
    x, y = _check_pair(x, y)
    conc, disc, tx, ty, tb = kernels.kendall_pair_counts(x, y)
    n0 = len(x) * (len(x) - 1) // 2
    n1 = tx + tb
    n2 = ty + tb
    return (conc - disc) / math.sqrt((n0 - n1) * (n0 - n2))


def weighted_kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Pairs weighted by ``1/(r_i+1) + 1/(r_j+1)``, ``r`` = 0-based mid-rank of
    ``x`` in descending order; normalized by the total pair weight."""
    x, y = _check_pair(x, y)
    r = midranks(x, descending=True) - 1.0
    weights = np.ascontiguousarray(1.0 / (r + 1.0))
    signed, total = kernels.weighted_pair_sums(x, y, weights)
    return signed / total


# -- Wilcoxon signed-rank ---------------------------------------------------------


class Outcome(str, enum.Enum):
    A_SIGNIFICANT = "A_significant"
    B_SIGNIFICANT = "B_significant"
    NOT_SIGNIFICANT = "not_significant"


ZERO_MODES = ("zsplit", "wilcox", "pratt")


@dataclass(frozen=True)
class WpaConfig:
    alpha: float = 0.05
    zero_handling: str = "zsplit"
    min_topics: int = 5
    exact_max_n: int = 25

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.zero_handling not in ZERO_MODES:
            raise ValueError(f"zero_handling must be one of {ZERO_MODES}")
        if self.min_topics < 1:
            raise ValueError("min_topics must be >= 1")

    def to_record(self) -> dict:
        return {
            "alpha": self.alpha,
            "zero_handling": self.zero_handling,
            "min_topics": self.min_topics,
            "exact_max_n": self.exact_max_n,
        }


@dataclass(frozen=True)
class SignedRankResult:
    statistic: float  # positive-rank sum, zero ranks split per config
    p_value: float
    n: int
    method: str
    outcome: Outcome


def _signed_rank_parts(d: np.ndarray, zero_handling: str) -> tuple[list[int], list[int], int]:
    """Doubled ranks of positive and negative differences plus the doubled
    constant contributed to the positive-rank sum by zeros."""
    if zero_handling == "wilcox":
        d = d[d != 0]
    ranks = midranks(np.abs(d))
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    if zero_handling == "pratt":
        nz = d != 0
        return doubled[(d > 0) & nz].tolist(), doubled[(d < 0) & nz].tolist(), 0
    zeros = doubled[d == 0]
    # each zero adds half its rank to the positive sum
    return doubled[d > 0].tolist(), doubled[d < 0].tolist(), int(zeros.sum()) // 2


def signed_rank_test(a: Sequence[float], b: Sequence[float], config: WpaConfig = WpaConfig()) -> SignedRankResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("paired samples must have equal length")
    if len(a) < config.min_topics:
        raise InsufficientDataError(f"{len(a)} pairs < min_topics={config.min_topics}")
    d = a - b
    if not np.any(d != 0):
        return SignedRankResult(float("nan"), 1.0, len(d), "degenerate", Outcome.NOT_SIGNIFICANT)
    pos, neg, zero_const2 = _signed_rank_parts(d, config.zero_handling)
    nonzero = pos + neg
    total2 = sum(nonzero)
    s2 = sum(pos)  # doubled random part of the positive-rank sum
    statistic = (s2 + zero_const2) / 2.0
    m = len(nonzero)
    if m <= config.exact_max_n:
        counts = kernels.signed_rank_null_counts(np.asarray(nonzero, dtype=np.int64))
        dev = abs(2 * s2 - total2)
        support = np.arange(len(counts), dtype=np.int64)
        extreme = np.abs(2 * support - total2) >= dev
        p = float(counts[extreme].sum()) / 2.0**m
        method = "exact"
    else:
        ranks = np.asarray(nonzero, dtype=np.float64) / 2.0
        mean = ranks.sum() / 2.0
        sd = math.sqrt(float(np.sum(ranks**2)) / 4.0)
        dev = abs(s2 / 2.0 - mean)
        z = max(dev - 0.5, 0.0) / sd
        p = math.erfc(z / math.sqrt(2.0))
        method = "normal"
    p = min(1.0, p)
    if p <= config.alpha:
        outcome = Outcome.A_SIGNIFICANT if 2 * s2 > total2 else Outcome.B_SIGNIFICANT
    else:
        outcome = Outcome.NOT_SIGNIFICANT
    return SignedRankResult(statistic, p, len(d), method, outcome)


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], config: WpaConfig = WpaConfig()) -> Outcome:
    return signed_rank_test(a, b, config).outcome


# -- Wilcoxon paired accuracy -----------------------------------------------------


def _pair_topics(ref: ScoreMatrix, cand: ScoreMatrix, ri: str, rj: str, topics: Sequence[str]) -> list[str]:
    out = []
    for t in topics:
        vals = (ref.value(ri, t), ref.value(rj, t), cand.value(ri, t), cand.value(rj, t))
        if all(v is not None for v in vals):
            out.append(t)
    return out


@dataclass(frozen=True)
class PairOutcome:
    run_i: str
    run_j: str
    reference: Outcome
    candidate: Outcome

    @property
    def agree(self) -> bool:
        return self.reference is self.candidate


def wpa_pairs(reference: ScoreMatrix, candidate: ScoreMatrix, config: WpaConfig = WpaConfig()) -> list[PairOutcome]:
    runs = sorted(set(reference.run_ids) & set(candidate.run_ids))
    topics = sorted(set(reference.topic_ids) & set(candidate.topic_ids))
    if len(runs) < 2:
        raise InsufficientDataError("WPA needs at least two shared runs")
    if len(topics) < config.min_topics:
        raise InsufficientDataError(f"{len(topics)} shared topics < min_topics={config.min_topics}")
    out = []
    for i, ri in enumerate(runs):
        for rj in runs[i + 1 :]:
            ts = _pair_topics(reference, candidate, ri, rj, topics)
            ref_o = wilcoxon_signed_rank(
                [reference.value(ri, t) for t in ts], [reference.value(rj, t) for t in ts], config
            )
            cand_o = wilcoxon_signed_rank(
                [candidate.value(ri, t) for t in ts], [candidate.value(rj, t) for t in ts], config
            )
            out.append(PairOutcome(ri, rj, ref_o, cand_o))
    return out


def wpa(reference: ScoreMatrix, candidate: ScoreMatrix, config: WpaConfig = WpaConfig()) -> float:
    """Fraction of run pairs on which both matrices' tests reach the same
    three-way outcome (i wins / j wins / not significant)."""
    pairs = wpa_pairs(reference, candidate, config)
    return sum(p.agree for p in pairs) / len(pairs)


# -- leaderboard comparisons ------------------------------------------------------


WEIGHTING = "additive-hyperbolic-on-reference-ranks"


@dataclass(frozen=True)
class CorrelationReport:
    reference_label: str
    candidate_label: str
    rho: float
    tau: float
    weighted_tau: float
    wpa: float
    n_runs: int
    weighting: str = WEIGHTING

    def values(self) -> dict[str, float]:
        return {"rho": self.rho, "tau": self.tau, "weighted_tau": self.weighted_tau, "wpa": self.wpa}


METRICS = ("rho", "tau", "weighted_tau", "wpa")


def _shared_runs(reference: Leaderboard, candidate: Leaderboard) -> list[str]:
    runs = sorted(set(reference.run_ids) & set(candidate.run_ids))
    if len(runs) < 2:
        raise InsufficientDataError(
            f"{reference.label} and {candidate.label} share {len(runs)} runs; need at least 2"
        )
    return runs


def restrict(board: Leaderboard, run_ids: Sequence[str]) -> Leaderboard:
    keep = set(run_ids)
    return Leaderboard(
        board.label,
        tuple(r for r in board.rows if r.run_id in keep),
        board.judged_with,
        board.bank_fingerprint,
        board.missing_policy,
    )


def correlation_report(
    reference: Leaderboard, candidate: Leaderboard, wpa_config: WpaConfig = WpaConfig()
) -> CorrelationReport:
    runs = _shared_runs(reference, candidate)
    rm, cm = reference.macro(), candidate.macro()
    x = [rm[r] for r in runs]
    y = [cm[r] for r in runs]
    ref_m = restrict(reference, runs).score_matrix()
    cand_m = restrict(candidate, runs).score_matrix()
    return CorrelationReport(
        reference_label=reference.label,
        candidate_label=candidate.label,
        rho=spearman_rho(x, y),
        tau=kendall_tau(x, y),
        weighted_tau=weighted_kendall_tau(x, y),
        wpa=wpa(ref_m, cand_m, wpa_config),
        n_runs=len(runs),
    )


@dataclass(frozen=True)
class SubsetReport:
    subset: CorrelationReport
    full: CorrelationReport
    deltas: Mapping[str, float] = field(default_factory=dict)


def subset_report(
    reference: Leaderboard,
    candidate: Leaderboard,
    run_filter: Sequence[str],
    wpa_config: WpaConfig = WpaConfig(),
) -> SubsetReport:
    keep = sorted(set(run_filter) & set(reference.run_ids) & set(candidate.run_ids))
    if len(keep) < 2:
        raise InsufficientDataError(f"run filter leaves {len(keep)} shared runs; need at least 2")
    full = correlation_report(reference, candidate, wpa_config)
    sub = correlation_report(restrict(reference, keep), restrict(candidate, keep), wpa_config)
    deltas = {m: getattr(sub, m) - getattr(full, m) for m in METRICS}
    return SubsetReport(sub, full, deltas)


@dataclass(frozen=True)
class CrossSetMatrix:
    labels: tuple[str, ...]
    rho: tuple[tuple[float, ...], ...]
    tau: tuple[tuple[float, ...], ...]


def cross_set_matrix(leaderboards: Sequence[Leaderboard]) -> CrossSetMatrix:
    if len(leaderboards) < 2:
        raise ContractError("need at least two leaderboards")
    labels = [b.label for b in leaderboards]
    if len(set(labels)) != len(labels):
        raise ContractError("leaderboard labels must be unique")
    k = len(leaderboards)
    rho = np.eye(k)
    tau = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            runs = _shared_runs(leaderboards[i], leaderboards[j])
            mi, mj = leaderboards[i].macro(), leaderboards[j].macro()
            x = [mi[r] for r in runs]
            y = [mj[r] for r in runs]
            rho[i, j] = rho[j, i] = spearman_rho(x, y)
            tau[i, j] = tau[j, i] = kendall_tau(x, y)
    return CrossSetMatrix(tuple(labels), tuple(map(tuple, rho.tolist())), tuple(map(tuple, tau.tolist())))


@dataclass(frozen=True)
class ScatterRow:
    run_id: str
    topic_id: str | None
    x: float  # candidate score
    y: float  # reference score


def scatter_data(reference: Leaderboard, candidate: Leaderboard, level: str = "system") -> list[ScatterRow]:
    runs = sorted(set(reference.run_ids) & set(candidate.run_ids))
    ref_rows: Mapping[str, LeaderboardRow] = {r.run_id: r for r in reference.rows}
    cand_rows: Mapping[str, LeaderboardRow] = {r.run_id: r for r in candidate.rows}
    if level == "system":
        return [ScatterRow(r, None, cand_rows[r].macro_recall, ref_rows[r].macro_recall) for r in runs]
    if level == "topic":
        out = []
        for r in runs:
            rt, ct = ref_rows[r].per_topic, cand_rows[r].per_topic
            for t in sorted(set(rt) & set(ct)):
                out.append(ScatterRow(r, t, ct[t], rt[t]))
        return out
    raise ValueError(f"level must be 'system' or 'topic', got {level!r}")


# -- CSV emitters (column contracts documented in FORMATS.md) -----------------------


def write_correlation_csv(path, reports: Sequence[CorrelationReport]) -> None:
    write_csv(
        path,
        ["reference", "candidate", "n_runs", "rho", "tau", "weighted_tau", "wpa"],
        ([r.reference_label, r.candidate_label, r.n_runs, r.rho, r.tau, r.weighted_tau, r.wpa] for r in reports),
    )


def write_subset_csv(path, report: SubsetReport) -> None:
    write_csv(
        path,
        ["metric", "subset", "full", "delta"],
        ([m, getattr(report.subset, m), getattr(report.full, m), report.deltas[m]] for m in METRICS),
    )


def write_heatmap_csv(path, matrix: CrossSetMatrix) -> None:
    rows = []
    for metric, mat in (("rho", matrix.rho), ("tau", matrix.tau)):
        for label, row in zip(matrix.labels, mat):
            rows.append([metric, label, *row])
    write_csv(path, ["metric", "label", *matrix.labels], rows)


def write_scatter_csv(path, rows: Sequence[ScatterRow]) -> None:
    write_csv(path, ["run_id", "topic_id", "x", "y"], ([r.run_id, r.topic_id or "", r.x, r.y] for r in rows))
