import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_nugget, responder_client, scripted_client
from nuggetbank.evalharness import (
    MissingPolicy,
    build_leaderboard,
    judge_nugget,
    judge_reports,
    nugget_recall,
    read_leaderboard_csv,
    write_leaderboard_csv,
)
from nuggetbank.model import (
    ContractError,
    Diagnostics,
    JudgmentSet,
    NuggetBank,
    Report,
    SelectionMethod,
    Sentence,
    Verdict,
)


def report(run, text, topic="T1"):
    return Report(run, topic, (Sentence(text, ("d1",)),))


def bank(topic, n_selected, n_extra=0):
    sel = tuple(make_nugget(f"{topic}/d1/{i}", [(f"a{i}", ["d1"])], topic=topic) for i in range(n_selected))
    extra = tuple(make_nugget(f"{topic}/d9/{i}", [(f"x{i}", ["d9"])], topic=topic) for i in range(n_extra))
    return NuggetBank(topic, sel, tuple(sorted(sel + extra, key=lambda n: n.nugget_id)), SelectionMethod.COMMON, "fp")


def judgments(run, b, addressed_ids, label="j"):
    return {
        (run, b.topic_id, n.nugget_id): Verdict((n.nugget_id in addressed_ids,), n.nugget_id in addressed_ids)
        for n in b.candidates
    }


# -- judge ------------------------------------------------------------------------------


TWO = [("Alpha Corp", ["d1"]), ("Beta Ltd", ["d2"])]


def test_or_nugget_addressed_by_one_answer():
    v = judge_nugget(report("r", "Beta Ltd won the bid."), make_nugget("n", TWO), scripted_client())
    assert v == Verdict((False, True), True)


def test_and_nugget_needs_every_answer():
    v = judge_nugget(report("r", "Beta Ltd won the bid."), make_nugget("n", TWO, aggregator="AND"), scripted_client())
    assert v == Verdict((False, True), False)
    v = judge_nugget(report("r", "alpha corp and beta ltd."), make_nugget("n", TWO, aggregator="AND"), scripted_client())
    assert v.addressed


def test_topic_mismatch_is_contract_error():
    with pytest.raises(ContractError):
        judge_nugget(report("r", "x", topic="T2"), make_nugget("n", TWO), scripted_client())


def test_judge_failures_are_conservative():
    diags = Diagnostics()
    client = responder_client(lambda r: (_ for _ in ()).throw(ConnectionError()), max_retries=0)
    assert judge_nugget(report("r", "Alpha Corp"), make_nugget("n", TWO), client, diags) == Verdict((False, False), False)
    assert diags.count("provider_error") == 2
    diags = Diagnostics()
    v = judge_nugget(report("r", "Alpha Corp"), make_nugget("n", TWO), responder_client(lambda r: "perhaps"), diags)
    assert not v.addressed and diags.count("parse_error") == 2


def test_judge_prompts_are_per_answer_and_cached():
    seen = []
    client = responder_client(lambda r: seen.append(r.variables["answer"]) or "YES")
    n = make_nugget("n", TWO)
    judge_nugget(report("r", "text"), n, client)
    judge_nugget(report("r", "text"), n, client)
    assert seen == ["Alpha Corp", "Beta Ltd"]
    assert client.cache_hits == 2


def test_judge_reports_covers_selected_only():
    b = bank("T1", 2, n_extra=3)
    js = judge_reports([report("r1", "a0 a1"), report("r2", "x"), report("r3", "y", topic="T9")], {"T1": b}, scripted_client(), "lbl")
    assert js.judge_label == "lbl"
    assert sorted(js.entries) == [("r1", "T1", "T1/d1/0"), ("r1", "T1", "T1/d1/1"), ("r2", "T1", "T1/d1/0"), ("r2", "T1", "T1/d1/1")]
    assert nugget_recall(report("r1", ""), b, js) == 1.0


# -- recall -----------------------------------------------------------------------------


def test_three_of_twenty():
    b = bank("T1", 20)
    js = JudgmentSet("j", judgments("r", b, {"T1/d1/0", "T1/d1/5", "T1/d1/7"}))
    assert nugget_recall(report("r", ""), b, js) == 0.15


def test_recall_bounds():
    b = bank("T1", 4)
    assert nugget_recall(report("r", ""), b, JudgmentSet("j", judgments("r", b, set()))) == 0.0
    every = {n.nugget_id for n in b.selected}
    assert nugget_recall(report("r", ""), b, JudgmentSet("j", judgments("r", b, every))) == 1.0


def test_extra_judgments_are_ignored():
    b = bank("T1", 4, n_extra=4)
    sel = {"T1/d1/0"}
    base = nugget_recall(report("r", ""), b, JudgmentSet("j", judgments("r", b, sel)))
    extra = nugget_recall(report("r", ""), b, JudgmentSet("j", judgments("r", b, sel | {f"T1/d9/{i}" for i in range(4)})))
    assert base == extra == 0.25


def test_missing_judgment_is_contract_error():
    b = bank("T1", 3)
    entries = judgments("r", b, set())
    del entries[("r", "T1", "T1/d1/2")]
    with pytest.raises(ContractError):
        nugget_recall(report("r", ""), b, JudgmentSet("j", entries))
    with pytest.raises(ContractError):
        nugget_recall(report("r", "", topic="T2"), b, JudgmentSet("j", entries))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=12), st.integers(0, 11))
def test_recall_monotonicity(flags, k):
    b = bank("T1", len(flags))
    ids = {n.nugget_id for n, f in zip(b.selected, flags) if f}
    target = b.selected[k % len(flags)].nugget_id
    score = nugget_recall(report("r", ""), b, JudgmentSet("j", judgments("r", b, ids)))
    up = nugget_recall(report("r", ""), b, JudgmentSet("j", judgments("r", b, ids | {target})))
    down = nugget_recall(report("r", ""), b, JudgmentSet("j", judgments("r", b, ids - {target})))
    assert down <= score <= up


# -- leaderboard ------------------------------------------------------------------------


def four_topics():
    return {t: bank(t, 5) for t in ("T1", "T2", "T3", "T4")}


def fill(banks, run, hits):
    """``hits`` maps topic -> number of addressed nuggets (the first ones)."""
    out = {}
    for t, k in hits.items():
        out.update(judgments(run, banks[t], {n.nugget_id for n in banks[t].selected[:k]}))
    return out


def test_macro_is_mean_of_topics():
    banks = {"T1": bank("T1", 5), "T2": bank("T2", 5)}
    js = JudgmentSet("j", fill(banks, "r", {"T1": 1, "T2": 2}))
    board = build_leaderboard([report("r", "", "T1"), report("r", "", "T2")], banks, js)
    assert board.rows[0].macro_recall == pytest.approx(0.3)
    assert board.rows[0].per_topic == {"T1": 0.2, "T2": 0.4}
    assert board.audit() == []


def test_missing_topic_policies():
    banks = four_topics()
    js = JudgmentSet("j", fill(banks, "r", {"T1": 5, "T2": 5, "T3": 5}))
    reports = [report("r", "", t) for t in ("T1", "T2", "T3")]
    zero = build_leaderboard(reports, banks, js)
    assert zero.rows[0].macro_recall == 0.75 and zero.rows[0].per_topic["T4"] == 0.0
    skip = build_leaderboard(reports, banks, js, missing_policy="skip")
    assert skip.rows[0].macro_recall == 1.0 and "T4" not in skip.rows[0].per_topic
    assert skip.missing_policy is MissingPolicy.SKIP and zero.missing_policy is MissingPolicy.ZERO


def test_equal_macro_ordered_by_run_id():
    banks = {"T1": bank("T1", 5)}
    js = JudgmentSet("j", {**fill(banks, "zeta", {"T1": 2}), **fill(banks, "alpha", {"T1": 2}), **fill(banks, "mid", {"T1": 4})})
    board = build_leaderboard([report(r, "") for r in ("zeta", "alpha", "mid")], banks, js)
    assert board.run_ids == ["mid", "alpha", "zeta"]


def test_run_without_bank_topics_is_excluded():
    banks = {"T1": bank("T1", 2)}
    diags = Diagnostics()
    js = JudgmentSet("j", fill(banks, "a", {"T1": 1}))
    board = build_leaderboard([report("a", ""), report("b", "", topic="T7")], banks, js, run_ids=["ghost"], diagnostics=diags)
    assert board.run_ids == ["a"]
    assert sorted(d.item for d in diags.items() if d.kind == "run_excluded") == ["b", "ghost"]


def test_duplicate_report_rejected():
    banks = {"T1": bank("T1", 2)}
    with pytest.raises(ContractError):
        build_leaderboard([report("a", ""), report("a", "")], banks, JudgmentSet("j", fill(banks, "a", {"T1": 1})))


def test_random_leaderboards_pass_audit(tmp_path):
    rng = random.Random(0)
    banks = four_topics()
    for trial in range(20):
        entries, reports = {}, []
        for r in range(rng.randint(1, 6)):
            topics = rng.sample(sorted(banks), rng.randint(1, 4))
            entries.update(fill(banks, f"run{r}", {t: rng.randint(0, 5) for t in topics}))
            reports += [report(f"run{r}", "", t) for t in topics]
        for policy in ("zero", "skip"):
            board = build_leaderboard(reports, banks, JudgmentSet("j", entries), missing_policy=policy)
            assert board.audit() == []
            path = tmp_path / f"lb{trial}{policy}.csv"
            write_leaderboard_csv(path, board)
            back = read_leaderboard_csv(path)
            assert back.macro() == board.macro()
            assert back.run_ids == board.run_ids
