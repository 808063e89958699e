import random

import numpy as np
import pytest

import oracles
from conftest import mock_config, table_embedder
from nuggetbank.alignment import (
    Judgment,
    MatchPair,
    alignment_report,
    blocking_pairs,
    match_from_similarity,
    stable_match,
    unmatched_gold,
    write_alignment,
)
from nuggetbank.io import read_jsonl
from nuggetbank.model import ContractError
from nuggetbank.providers import EmbedClient, HashingEmbedder


def unit(*xs):
    v = np.asarray(xs, dtype=float)
    return (v / np.linalg.norm(v)).tolist()


def test_single_gold_takes_argmax():
    emb = table_embedder({"g": unit(1, 0, 0), "a": unit(1, 1, 0), "b": unit(1, 0.1, 0), "c": unit(0, 1, 0)})
    pairs = stable_match({"G": "g"}, {"A": "a", "B": "b", "C": "c"}, emb)
    assert [(p.gold_id, p.gen_id) for p in pairs] == [("G", "B")]
    assert pairs[0].cosine == pytest.approx(unit(1, 0.1, 0)[0])


def row_greedy(sim):
    """Each gold in turn grabs its best remaining gen."""
    taken, out = set(), []
    for g in range(len(sim)):
        best = max((j for j in range(len(sim[0])) if j not in taken), key=lambda j: sim[g][j])
        taken.add(best)
        out.append((g, best))
    return out


def test_stable_differs_from_greedy():
    sim = [
        [0.80, 0.70, 0.10],
        [0.90, 0.20, 0.30],
        [0.40, 0.60, 0.50],
    ]
    greedy = row_greedy(sim)
    assert greedy == [(0, 0), (1, 2), (2, 1)]
    assert not oracles.is_stable(greedy, sim)
    gold, gen = ["g0", "g1", "g2"], ["n0", "n1", "n2"]
    got = match_from_similarity(gold, gen, sim)
    assert [(g, n) for g, n, _ in got] == [("g0", "n1"), ("g1", "n0"), ("g2", "n2")]
    assert blocking_pairs([(g, n) for g, n, _ in got], gold, gen, sim) == []
    assert blocking_pairs([("g0", "n0"), ("g1", "n2"), ("g2", "n1")], gold, gen, sim) == [("g1", "n0")]


def gold_rank(g, n, sim):
    return (-sim[g][n], n)


def test_enumeration_oracle_small():
    rng = random.Random(0)
    for _ in range(500):
        G, N = rng.randint(1, 4), rng.randint(1, 4)
        # coarse values so that ties occur and the id tie-break matters
        sim = [[rng.choice([0.1, 0.3, 0.5, 0.7, 0.9]) for _ in range(N)] for _ in range(G)]
        gold = [f"g{i}" for i in range(G)]
        gen = [f"n{j}" for j in range(N)]
        got = [(int(g[1:]), int(n[1:])) for g, n, _ in match_from_similarity(gold, gen, sim)]
        stable = [m for m in oracles.all_matchings(G, N) if oracles.is_stable(m, sim)]
        assert stable, "a stable matching always exists"
        assert sorted(got) in [sorted(m) for m in stable]
        # gold-optimal: no stable matching gives any gold a better partner
        mine = dict(got)
        for m in stable:
            for g, n in m:
                assert g in mine and gold_rank(g, mine[g], sim) <= gold_rank(g, n, sim)


def test_no_blocking_pairs_up_to_six():
    rng = random.Random(1)
    for _ in range(200):
        G, N = rng.randint(1, 6), rng.randint(1, 6)
        sim = np.array([[rng.uniform(-1, 1) for _ in range(N)] for _ in range(G)])
        gold = [f"g{i}" for i in range(G)]
        gen = [f"n{j}" for j in range(N)]
        got = match_from_similarity(gold, gen, sim)
        assert len(got) == min(G, N)
        assert len({g for g, _, _ in got}) == len({n for _, n, _ in got}) == len(got)
        idx = [(int(g[1:]), int(n[1:])) for g, n, _ in got]
        assert oracles.is_stable(idx, sim.tolist())
        assert blocking_pairs([(g, n) for g, n, _ in got], gold, gen, sim) == []


def test_identical_sets_match_identically():
    qs = {f"q{i}": f"what is fact number {i} about the statue" for i in range(6)}
    emb = EmbedClient(mock_config(), HashingEmbedder(256))
    pairs = stable_match(qs, {f"x{k[1:]}": v for k, v in qs.items()}, emb)
    assert [(p.gold_id, p.gen_id) for p in pairs] == [(f"q{i}", f"x{i}") for i in range(6)]
    assert all(p.cosine == pytest.approx(1.0) for p in pairs)


def test_excess_gold_left_unmatched_and_deterministic():
    emb = EmbedClient(mock_config(), HashingEmbedder(64))
    gold = {f"g{i}": f"gold question {i} about copper" for i in range(5)}
    gen = {"a": "gold question 1 about copper", "b": "gold question 3 about copper"}
    pairs = stable_match(gold, gen, emb)
    assert stable_match(gold, gen, emb) == pairs
    assert {(p.gold_id, p.gen_id) for p in pairs} == {("g1", "a"), ("g3", "b")}
    assert unmatched_gold(pairs, gold) == ["g0", "g2", "g4"]


def test_guards():
    emb = table_embedder({"a": [1.0]})
    with pytest.raises(ContractError):
        stable_match({}, {"x": "a"}, emb)
    with pytest.raises(ContractError):
        match_from_similarity(["a"], ["b"], [[0.1, 0.2]])
    with pytest.raises(ContractError):
        MatchPair("g", "n", 1.5)


# -- report -----------------------------------------------------------------------------


def test_threshold_marks_clear():
    text = alignment_report([MatchPair("g", "n", 0.95, None, "Gold?", "Gen?")], threshold_clear=0.9)
    assert text.splitlines()[0] == "Clearly matched: 1"
    assert "SIM: 0.950" in text
    assert alignment_report([], 0.9) == ""


FIGURE_SIMS = [
    (0.732, "clear"),
    (0.745, "clear"),
    (0.643, "unclear"),
    (0.634, "unclear"),
    (0.521, "unclear"),
    (0.693, "unclear"),
    (0.608, "unclear"),
    (0.874, "unclear"),
    (0.691, "unclear"),
    (0.605, "unclear"),
]


def figure_pairs(judged=True):
    return [
        MatchPair(f"g{i}", f"n{i}", c, lab if judged else None, f"gold {i}?", f"gen {i}?")
        for i, (c, lab) in enumerate(FIGURE_SIMS, 1)
    ]


def sims_in(block):
    return [float(line.split("SIM: ")[1]) for line in block if "SIM:" in line]


def test_figure_shaped_fixture_ordering():
    lines = alignment_report(figure_pairs()).splitlines()
    cut = lines.index("Unclearly matched: 8")
    assert lines[0] == "Clearly matched: 2"
    clear, unclear = sims_in(lines[:cut]), sims_in(lines[cut:])
    assert clear == [0.745, 0.732]
    assert unclear == sorted(unclear, reverse=True) and unclear[0] == 0.874
    assert [ln.strip().split(")")[0] for ln in lines if "GEN:" in ln] == [str(k) for k in range(1, 11)]


def test_unjudged_pairs_use_provisional_threshold():
    lines = alignment_report(figure_pairs(judged=False), threshold_clear=0.72).splitlines()
    assert lines[0] == "Clearly matched: 3"
    assert sims_in(lines[: lines.index("Unclearly matched: 7")]) == [0.874, 0.745, 0.732]
    assert all(ln.strip() == "JUDGED:" for ln in lines if "JUDGED" in ln)


def test_unmatched_listed_and_files_written(tmp_path):
    pairs = figure_pairs()[:2]
    write_alignment(tmp_path, pairs, 0.72, ["g9"])
    text = (tmp_path / "alignment.txt").read_text(encoding="utf-8")
    assert text.endswith("Unmatched gold: 1\n  - g9\n")
    recs = list(read_jsonl(tmp_path / "alignment.jsonl"))
    assert [MatchPair.from_record(r) for r in recs] == sorted(pairs, key=lambda p: -p.cosine)
    assert recs[0]["judged"] == Judgment.CLEAR.value
