import csv
import json
from pathlib import Path


from conftest import make_nugget
from nuggetbank import pipeline
from nuggetbank.cli import main
from nuggetbank.config import load_config
from nuggetbank.evalharness import read_leaderboard_csv
from nuggetbank.io import bank_records, read_jsonl, write_jsonl
from nuggetbank.model import NuggetBank, SelectionMethod, audit_bank


def run(e2e_dir, *args):
    return main(["--config", str(e2e_dir / "config.toml"), *map(str, args)])


def manifest(e2e_dir, method="dogmatiq"):
    return json.loads((e2e_dir / "out" / f"manifest.{method}.json").read_text())


def bank_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted((root / "banks").rglob("*.jsonl"))}


# -- generate ---------------------------------------------------------------------------


def test_generate_writes_banks_and_consistent_manifest(e2e_dir, capsys):
    assert run(e2e_dir, "generate") == 0
    files = sorted((e2e_dir / "out" / "banks" / "dogmatiq").glob("*.jsonl"))
    assert [f.name for f in files] == ["T1.jsonl", "T2.jsonl"]
    m = manifest(e2e_dir)
    assert m["failed_topics"] == {}
    for counts in m["counts"].values():
        assert counts["documents"] == 3
        assert counts["candidates"] >= counts["clusters"] >= counts["refined"] >= counts["selected"]
        assert counts["selected"] == min(3, counts["refined"])
    banks = pipeline.load_banks(e2e_dir / "out" / "banks" / "dogmatiq")
    assert all(audit_bank(b) == [] for b in banks.values())
    assert "T1 documents=3" in capsys.readouterr().out


def test_rerun_makes_no_provider_calls(e2e_dir):
    assert run(e2e_dir, "generate") == 0
    first = manifest(e2e_dir)["provider_calls"]
    assert first["chat_calls"] > 0 and first["embed_calls"] > 0
    before = bank_bytes(e2e_dir / "out")
    assert run(e2e_dir, "generate") == 0
    m = manifest(e2e_dir)
    assert m["provider_calls"]["chat_calls"] == 0 and m["provider_calls"]["embed_calls"] == 0
    assert m["reused"] == {t: ["stage1", "stage2a", "stage2b", "stage3"] for t in ("T1", "T2")}
    assert bank_bytes(e2e_dir / "out") == before


def test_threshold_change_reuses_stage1_only(e2e_dir):
    assert run(e2e_dir, "generate") == 0
    assert run(e2e_dir, "generate", "--cosine-threshold", "0.8") == 0
    m = manifest(e2e_dir)
    assert m["reused"] == {"T1": ["stage1"], "T2": ["stage1"]}
    assert m["provider_calls"]["chat_calls"] > 0


def test_clean_runs_are_byte_identical_across_parallelism(e2e_dir, tmp_path):
    outs = []
    for k, par in enumerate((1, 4, 1)):
        out = tmp_path / f"o{k}"
        assert run(e2e_dir, "--parallelism", par, "generate", "--out", out) == 0
        outs.append(bank_bytes(out))
    assert outs[0] == outs[1] == outs[2]
    assert len(outs[0]) == 2


def test_all_methods_and_select_from_store(e2e_dir):
    for method in ("dogmatiq", "common", "sample"):
        assert run(e2e_dir, "generate", "--method", method) == 0
    root = e2e_dir / "out" / "banks"
    selected = {
        m: {t: [n.nugget_id for n in b.selected] for t, b in pipeline.load_banks(root / m).items()}
        for m in ("dogmatiq", "common", "sample")
    }
    assert selected["common"] != selected["sample"] or selected["common"] != selected["dogmatiq"]
    before = (root / "common" / "T1.jsonl").read_bytes()
    assert run(e2e_dir, "select", "--method", "common") == 0
    assert (root / "common" / "T1.jsonl").read_bytes() == before
    assert run(e2e_dir, "select", "--method", "common", "--cap", "1") == 0
    assert all(len(b.selected) == 1 for b in pipeline.load_banks(root / "common").values())


def test_dry_run_counts_without_writing(e2e_dir, capsys):
    assert run(e2e_dir, "--dry-run", "generate") == 0
    assert not (e2e_dir / "out").exists()
    line = capsys.readouterr().out.splitlines()[0]
    planned = int(line.split("dry run: ")[1].split()[0])
    assert run(e2e_dir, "generate") == 0
    assert planned == manifest(e2e_dir)["provider_calls"]["chat_calls"]


def test_stage1_only(e2e_dir):
    assert run(e2e_dir, "generate", "--stage1-only") == 0
    assert not (e2e_dir / "out" / "banks").exists()
    assert (e2e_dir / "out" / "work" / "T1" / "candidates.jsonl").exists()


# -- exit codes -------------------------------------------------------------------------


def test_partial_topic_failure_exits_one(e2e_dir, capsys):
    with open(e2e_dir / "topics.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"topic_id": "T3", "title": "Orphan", "request_text": "Nothing ranked."}) + "\n")
    assert run(e2e_dir, "generate") == 1
    m = manifest(e2e_dir)
    assert sorted(m["counts"]) == ["T1", "T2"] and list(m["failed_topics"]) == ["T3"]
    assert "FAILED T3" in capsys.readouterr().err


def test_config_and_contract_errors_exit_two(e2e_dir, tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[cluster]\ncosine_threshold = 3\n")
    assert main(["--config", str(bad), "generate"]) == 2
    assert main(["--config", str(tmp_path / "missing.toml"), "generate"]) == 2
    (e2e_dir / "documents.jsonl").unlink()
    assert run(e2e_dir, "generate") == 2
    assert run(e2e_dir, "--parallelism", "0", "generate") == 2
    assert "error:" in capsys.readouterr().err


def test_validate(e2e_dir, capsys):
    assert run(e2e_dir, "validate") == 0
    assert capsys.readouterr().out.strip().endswith("PASS")
    rows = [json.loads(l) for l in (e2e_dir / "ranking.jsonl").read_text().splitlines()]
    rows[0]["entries"].append({"doc_id": "d404", "rank": 9, "score": 0.1})
    (e2e_dir / "ranking.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    assert run(e2e_dir, "validate") == 2
    assert "d404" in capsys.readouterr().out


def test_train_svm_reproduces_shipped_model(e2e_dir, tmp_path):
    out = tmp_path / "svm_model.json"
    assert run(e2e_dir, "train-svm", "--positives", e2e_dir / "train_positives.jsonl",
               "--negatives", e2e_dir / "train_negatives.jsonl", "--out", out) == 0
    assert out.read_bytes() == (e2e_dir / "svm_model.json").read_bytes()


# -- evaluation -------------------------------------------------------------------------


def hand_fixture(tmp_path):
    """Two topics x two runs; answers are matched by substring."""
    b1 = [
        make_nugget("T1/d1/1", [("copper", ["d1"])]),
        make_nugget("T1/d1/2", [("1886", ["d1"]), ("Bartholdi", ["d2"])], aggregator="AND"),
    ]
    b2 = [
        make_nugget("T2/d4/1", [("93 meters", ["d4"]), ("305 feet", ["d5"])], topic="T2"),
        make_nugget("T2/d4/2", [("Eiffel", ["d4"])], topic="T2"),
        make_nugget("T2/d5/1", [("Liberty Island", ["d5"])], topic="T2"),
        make_nugget("T2/d5/2", [("torch", ["d5"])], topic="T2"),
    ]
    banks = [NuggetBank("T1", tuple(b1), tuple(b1), SelectionMethod.COMMON, "fp1", 2),
             NuggetBank("T2", tuple(b2), tuple(b2), SelectionMethod.COMMON, "fp2", 4)]
    bank_dir = tmp_path / "banks"
    for b in banks:
        write_jsonl(bank_dir / f"{b.topic_id}.jsonl", bank_records(b))
    reports = [
        # runA: T1 copper + 1886 (no Bartholdi) -> 1/2 ; T2 305 feet, torch, Eiffel -> 3/4
        ("runA", "T1", "It is made of copper and was dedicated in 1886."),
        ("runA", "T2", "It stands 305 feet with a torch designed with Eiffel."),
        # runB: T1 both AND answers and copper -> 2/2 ; T2 Liberty Island only -> 1/4
        ("runB", "T1", "Bartholdi finished the copper statue in 1886."),
        ("runB", "T2", "It stands on Liberty Island."),
    ]
    rpath = tmp_path / "reports.jsonl"
    write_jsonl(rpath, [{"run_id": r, "topic_id": t, "sentences": [{"text": x, "citations": []}]} for r, t, x in reports])
    return bank_dir, rpath


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_evaluate_matches_hand_scores(e2e_dir, tmp_path):
    bank_dir, rpath = hand_fixture(tmp_path)
    out = tmp_path / "eval"
    assert run(e2e_dir, "evaluate", "--banks", bank_dir, "--reports", rpath, "--out", out) == 0
    rows = read_rows(out / "leaderboard.csv")
    assert rows[0] == ["run_id", "macro", "T1", "T2"]
    board = {r[0]: [float(x) for x in r[1:]] for r in rows[1:]}
    assert board == {"runA": [0.625, 0.5, 0.75], "runB": [0.625, 1.0, 0.25]}
    assert [r[0] for r in rows[1:]] == ["runA", "runB"]
    assert read_rows(out / "scores.csv")[0] == ["run_id", "T1", "T2", "macro"]

    # imported judgments give the same leaderboard through the separate subcommands
    lb = tmp_path / "lb.csv"
    assert run(e2e_dir, "leaderboard", "--banks", bank_dir, "--reports", rpath,
               "--judgments", out / "judgments.jsonl", "--out", lb) == 0
    assert lb.read_bytes() == (out / "leaderboard.csv").read_bytes()
    js = tmp_path / "j.jsonl"
    assert run(e2e_dir, "judge", "--banks", bank_dir, "--reports", rpath, "--out", js) == 0
    assert js.read_bytes() == (out / "judgments.jsonl").read_bytes()
    sc = tmp_path / "scores.csv"
    assert run(e2e_dir, "score", "--banks", bank_dir, "--reports", rpath, "--judgments", js, "--out", sc) == 0
    assert sc.read_bytes() == (out / "scores.csv").read_bytes()


def test_missing_topic_report_scores_zero(e2e_dir, tmp_path):
    bank_dir, rpath = hand_fixture(tmp_path)
    kept = [l for l in rpath.read_text().splitlines() if '"runB", "topic_id": "T2"' not in l]
    rpath.write_text("\n".join(kept) + "\n")
    out = tmp_path / "eval"
    assert run(e2e_dir, "evaluate", "--banks", bank_dir, "--reports", rpath, "--out", out) == 0
    board = read_leaderboard_csv(out / "leaderboard.csv")
    assert board.macro()["runB"] == 0.5
    assert run(e2e_dir, "evaluate", "--banks", bank_dir, "--reports", rpath, "--out", out, "--missing-policy", "skip") == 0
    assert read_leaderboard_csv(out / "leaderboard.csv").macro()["runB"] == 1.0


# -- comparison -------------------------------------------------------------------------


def write_board(path, macros):
    path.parent.mkdir(parents=True, exist_ok=True)
    topics = ["T1", "T2", "T3", "T4", "T5"]
    lines = ["run_id,macro," + ",".join(topics)]
    for run_id, base in macros.items():
        vals = [round(min(1.0, max(0.0, base + 0.02 * (k - 2))), 4) for k in range(5)]
        lines.append(f"{run_id},{sum(vals) / 5!r}," + ",".join(repr(v) for v in vals))
    path.write_text("\n".join(lines) + "\n")
    return path


def three_boards(tmp_path):
    a = write_board(tmp_path / "ref" / "leaderboard.csv", {"r1": 0.9, "r2": 0.7, "r3": 0.5, "r4": 0.3})
    b = write_board(tmp_path / "alt" / "leaderboard.csv", {"r1": 0.8, "r2": 0.75, "r3": 0.3, "r4": 0.4})
    c = write_board(tmp_path / "odd" / "leaderboard.csv", {"r1": 0.2, "r2": 0.6, "r3": 0.5, "r4": 0.9})
    return a, b, c


def test_correlate_self_is_perfect(e2e_dir, tmp_path, capsys):
    a, _, _ = three_boards(tmp_path)
    out = tmp_path / "cmp"
    assert run(e2e_dir, "correlate", "--reference", a, "--candidate", f"self={a}", "--min-topics", 5, "--out", out) == 0
    rows = read_rows(out / "correlation.csv")
    row = dict(zip(rows[0], rows[1]))
    assert [float(row[k]) for k in ("rho", "tau", "weighted_tau", "wpa")] == [1.0, 1.0, 1.0, 1.0]
    assert "self vs ref" in capsys.readouterr().out


def test_heatmap_is_symmetric_three_by_three(e2e_dir, tmp_path):
    boards = three_boards(tmp_path)
    out = tmp_path / "hm"
    assert run(e2e_dir, "heatmap", *boards, "--out", out) == 0
    rows = read_rows(out / "heatmap.csv")
    assert rows[0] == ["metric", "label", "ref", "alt", "odd"]
    for metric in ("rho", "tau"):
        block = [r for r in rows[1:] if r[0] == metric]
        assert [r[1] for r in block] == ["ref", "alt", "odd"]
        m = [[float(x) for x in r[2:]] for r in block]
        assert all(m[i][j] == m[j][i] for i in range(3) for j in range(3))
        assert all(m[i][i] == 1.0 for i in range(3))


def test_subset_writes_delta_block(e2e_dir, tmp_path, capsys):
    a, b, _ = three_boards(tmp_path)
    runs = tmp_path / "runs.txt"
    runs.write_text("r1\nr2\nr3\n")
    out = tmp_path / "sub"
    assert run(e2e_dir, "subset", "--reference", a, "--candidate", b, "--runs-file", runs,
               "--min-topics", 5, "--out", out) == 0
    text = capsys.readouterr().out
    assert "subset of 3 runs, alt vs ref" in text
    assert text.splitlines()[3].split() == ["metric", "subset", "full", "delta"]
    assert (out / "subset.alt.csv").exists()


def test_scatter_and_align(e2e_dir, tmp_path):
    a, b, _ = three_boards(tmp_path)
    assert run(e2e_dir, "scatter", "--reference", a, "--candidate", b, "--out", tmp_path / "s.csv") == 0
    assert len(read_rows(tmp_path / "s.csv")) == 5
    assert run(e2e_dir, "generate", "--method", "common") == 0
    assert run(e2e_dir, "generate", "--method", "sample") == 0
    banks = e2e_dir / "out" / "banks"
    out = tmp_path / "align"
    assert run(e2e_dir, "align", "--gold", banks / "common", "--gen", banks / "sample", "--out", out) == 0
    for t in ("T1", "T2"):
        text = (out / t / "alignment.txt").read_text()
        assert text.startswith("Clearly matched: ")
        assert len(list(read_jsonl(out / t / "alignment.jsonl"))) == 3


def test_correlate_errors_exit_two(e2e_dir, tmp_path):
    a = write_board(tmp_path / "x" / "leaderboard.csv", {"r1": 0.5, "r2": 0.5})
    assert run(e2e_dir, "correlate", "--reference", a, "--candidate", a, "--out", tmp_path / "c") == 2


def test_config_paths_follow_config_file(e2e_dir):
    cfg = load_config(e2e_dir / "config.toml")
    assert cfg.paths.output_dir == (e2e_dir / "out").resolve()
    assert Path(cfg.paths.svm_model).exists()
