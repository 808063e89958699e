"""The shipped end-to-end flow: generate with every method, evaluate each
bank set, then correlate the leaderboards."""

from pathlib import Path

from nuggetbank.cli import main

METHODS = ("dogmatiq", "common", "sample")
GOLDEN = Path(__file__).parent / "fixtures" / "e2e" / "golden"


def run_flow(e2e_dir: Path, out: Path, parallelism: int = 1) -> dict[str, bytes]:
    """Run the flow into ``out`` and return its golden-tracked files by relative path."""
    base = ["--config", str(e2e_dir / "config.toml"), "--parallelism", str(parallelism)]
    for m in METHODS:
        assert main([*base, "generate", "--method", m, "--out", str(out)]) == 0
    for m in METHODS:
        assert main([*base, "evaluate", "--banks", str(out / "banks" / m), "--reports", str(e2e_dir / "reports.jsonl"),
                     "--label", m, "--out", str(out / "eval" / m)]) == 0
    boards = [f"{m}={out / 'eval' / m / 'leaderboard.csv'}" for m in METHODS]
    cmd = [*base, "correlate", "--reference", boards[0], "--out", str(out / "compare")]
    for b in boards[1:]:
        cmd += ["--candidate", b]
    assert main(cmd) == 0
    return collect(out)


def collect(root: Path) -> dict[str, bytes]:
    files = [*(root / "banks").rglob("*.jsonl")]
    for m in METHODS:
        files += [root / "eval" / m / n for n in ("judgments.jsonl", "scores.csv", "leaderboard.csv")]
    files += [root / "compare" / "correlation.csv", root / "compare" / "summary.txt"]
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(files)}
