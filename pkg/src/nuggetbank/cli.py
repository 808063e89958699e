"""Command-line entry point: ``nuggetbank <subcommand> [options]``.

Exit codes: 0 success, 1 partial failure (some topics failed), 2 configuration
or contract error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline, rankstats
from .alignment import DEFAULT_CLEAR_THRESHOLD, stable_match, unmatched_gold, write_alignment
from .clusterstage import ClusterConfig
from .config import ConfigError, PipelineConfig, load_config
from .evalharness import (
    MissingPolicy,
    build_leaderboard,
    judge_reports,
    read_leaderboard_csv,
    write_leaderboard_csv,
)
from .io import (
    FormatError,
    import_judgments,
    read_criteria,
    read_documents,
    read_rankings,
    read_reports,
    read_topics,
    write_judgments,
    write_scores_csv,
)
from .model import ContractError, Diagnostics, validate_collection
from .providers import ProviderError
from .selectstage import SvmHyperparams, TrainingError, holdout_accuracy, train_svm

log = logging.getLogger("nuggetbank")

EXIT_OK, EXIT_PARTIAL, EXIT_CONTRACT = 0, 1, 2


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
        over["selection"] = replace(cfg.selection, seed=args.seed)
    if args.parallelism is not None:
        if args.parallelism < 1:
            raise ConfigError("--parallelism must be >= 1")
        over["parallelism"] = args.parallelism
    return cfg.with_overrides(**over) if over else cfg


def _wpa(cfg: PipelineConfig, args):
    if getattr(args, "min_topics", None) is not None or getattr(args, "alpha", None) is not None:
        return cfg.with_overrides(
            wpa=rankstats.WpaConfig(
                alpha=args.alpha if args.alpha is not None else cfg.wpa.alpha,
                zero_handling=cfg.wpa.zero_handling,
                min_topics=args.min_topics if args.min_topics is not None else cfg.wpa.min_topics,
                exact_max_n=cfg.wpa.exact_max_n,
            )
        )
    return cfg


# -- subcommands --------------------------------------------------------------------


def cmd_validate(args) -> int:
    cfg = _config(args)
    paths = cfg.paths
    topics = read_topics(args.topics or paths.topics)
    docs = read_documents(args.documents or paths.documents)
    rankings = read_rankings(args.ranking or paths.ranking)
    report = validate_collection(topics, docs, rankings)
    for d in report.diagnostics:
        print(f"{d.kind}\t{d.item}\t{d.message}")
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_CONTRACT


def _generate_config(args) -> PipelineConfig:
    cfg = _config(args)
    over = {}
    if args.method or args.cap:
        over["selection"] = replace(
            cfg.selection, method=args.method or cfg.selection.method, cap=args.cap or cfg.selection.cap
        )
    if args.cosine_threshold is not None or args.skip_llm_verify:
        over["cluster"] = ClusterConfig(
            args.cosine_threshold if args.cosine_threshold is not None else cfg.cluster.cosine_threshold,
            False if args.skip_llm_verify else cfg.cluster.verify_with_llm,
        )
    if args.top_k_docs is not None:
        over["stage1"] = replace(cfg.stage1, top_k_docs=args.top_k_docs)
    paths = cfg.paths
    if args.out:
        paths = replace(paths, output_dir=Path(args.out))
    if args.uninformative_pattern_file:
        paths = replace(paths, uninformative_pattern_file=Path(args.uninformative_pattern_file))
    if args.svm_model:
        paths = replace(paths, svm_model=Path(args.svm_model))
    over["paths"] = paths
    return cfg.with_overrides(**over)


def cmd_generate(args) -> int:
    cfg = _generate_config(args)
    missing = cfg.validate_paths()
    if missing:
        raise ConfigError(f"missing input files: {missing}")
    result = pipeline.cmd_generate(cfg, dry_run=args.dry_run, stage1_only=args.stage1_only)
    m = result.manifest
    if args.dry_run:
        calls = m.provider_calls
        print(f"dry run: {calls['chat_calls']} chat calls, {calls['embed_calls']} embedding calls would be made")
    for t, counts in sorted(m.counts.items()):
        print(t, " ".join(f"{k}={v}" for k, v in counts.items()))
    for t, err in sorted(m.failed_topics.items()):
        print(f"FAILED {t}: {err}", file=sys.stderr)
    return result.exit_code


def cmd_select(args) -> int:
    cfg = _generate_config(args)
    banks = pipeline.select_from_store(cfg)
    for b in banks:
        print(b.topic_id, f"selected={len(b.selected)}", f"candidates={len(b.candidates)}")
    return EXIT_OK


def cmd_train_svm(args) -> int:
    cfg = _config(args)
    pos = [v for _, _, v in read_criteria(args.positives)]
    neg = [v for _, _, v in read_criteria(args.negatives)]
    hp = cfg.svm
    if args.C is not None or args.epochs is not None:
        hp = SvmHyperparams(
            C=args.C if args.C is not None else hp.C,
            max_epochs=args.epochs if args.epochs is not None else hp.max_epochs,
            tol=hp.tol,
            seed=cfg.seed if args.seed is not None else hp.seed,
        )
    model = train_svm(pos, neg, hp)
    model.save(args.out)
    print(f"trained on {len(pos)}+{len(neg)} examples in {model.epochs_run} epochs; "
          f"training accuracy {holdout_accuracy(model, pos, neg):.3f}")
    if args.holdout_positives and args.holdout_negatives:
        hpos = [v for _, _, v in read_criteria(args.holdout_positives)]
        hneg = [v for _, _, v in read_criteria(args.holdout_negatives)]
        print(f"holdout accuracy {holdout_accuracy(model, hpos, hneg):.3f}")
    return EXIT_OK


def _reports(args, cfg):
    return read_reports(args.reports or cfg.paths.reports)


def _judgments(args, banks):
    diags = Diagnostics()
    js = import_judgments(args.judgments, args.judgment_format, list(banks.values()), diagnostics=diags)
    for d in diags.sorted():
        print(f"warning: {d.item}: {d.message}", file=sys.stderr)
    return js


def cmd_judge(args) -> int:
    cfg = _config(args)
    banks = pipeline.load_banks(args.banks)
    reports = _reports(args, cfg)
    providers = pipeline.Providers(cfg, dry_run=args.dry_run)
    diags = Diagnostics()
    js = judge_reports(reports, banks, providers.chat("judge"), args.label, diags, cfg.parallelism)
    if args.dry_run:
        print(f"dry run: {providers.counts()['chat_calls']} chat calls would be made")
        return EXIT_OK
    write_judgments(args.out, js)
    print(f"{len(js.entries)} judgments written; {len(diags)} diagnostics")
    return EXIT_OK


def _board(args, cfg):
    banks = pipeline.load_banks(args.banks)
    reports = _reports(args, cfg)
    js = _judgments(args, banks)
    policy = MissingPolicy(args.missing_policy or cfg.missing_policy)
    diags = Diagnostics()
    board = build_leaderboard(reports, banks, js, policy, args.label, diagnostics=diags)
    for d in diags.sorted():
        print(f"warning: {d.kind} {d.item}: {d.message}", file=sys.stderr)
    return board


def cmd_score(args) -> int:
    cfg = _config(args)
    write_scores_csv(args.out, _board(args, cfg).score_matrix())
    return EXIT_OK


def cmd_leaderboard(args) -> int:
    cfg = _config(args)
    board = _board(args, cfg)
    write_leaderboard_csv(args.out, board)
    for r in board.rows:
        print(f"{r.run_id}\t{r.macro_recall:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    banks = pipeline.load_banks(args.banks)
    reports = _reports(args, cfg)
    js = _judgments(args, banks) if args.judgments else None
    if js is None and args.dry_run:
        providers = pipeline.Providers(cfg, dry_run=True)
        judge_reports(reports, banks, providers.chat("judge"), "", Diagnostics(), cfg.parallelism)
        print(f"dry run: {providers.counts()['chat_calls']} chat calls would be made")
        return EXIT_OK
    res = pipeline.cmd_evaluate(cfg, banks, reports, args.out, js, args.label, args.missing_policy)
    for r in res.leaderboard.rows:
        print(f"{r.run_id}\t{r.macro_recall:.4f}")
    return EXIT_OK


def _load_board(spec: str):
    """``PATH`` or ``LABEL=PATH``; a bare ``.../NAME/leaderboard.csv`` is labelled NAME."""
    label, sep, path = spec.partition("=")
    if not sep:
        label, path = "", spec
        p = Path(path)
        if p.stem == "leaderboard" and p.parent.name:
            label = p.parent.name
    return read_leaderboard_csv(path, label=label)


def cmd_correlate(args) -> int:
    cfg = _wpa(_config(args), args)
    ref = _load_board(args.reference)
    cands = [_load_board(p) for p in args.candidate]
    text = pipeline.cmd_compare(cfg, ref, cands, args.out)
    print(text, end="")
    return EXIT_OK


def cmd_subset(args) -> int:
    cfg = _wpa(_config(args), args)
    runs = [l.strip() for l in Path(args.runs_file).read_text(encoding="utf-8").splitlines() if l.strip()]
    text = pipeline.cmd_compare(cfg, _load_board(args.reference), [_load_board(p) for p in args.candidate], args.out,
                                subset_runs=runs)
    print(text, end="")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    boards = [_load_board(p) for p in args.leaderboards]
    matrix = rankstats.cross_set_matrix(boards)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    rankstats.write_heatmap_csv(Path(args.out) / "heatmap.csv", matrix)
    print(Path(args.out) / "heatmap.csv")
    return EXIT_OK


def cmd_scatter(args) -> int:
    rows = rankstats.scatter_data(_load_board(args.reference), _load_board(args.candidate), args.level)
    rankstats.write_scatter_csv(args.out, rows)
    print(f"{len(rows)} rows written to {args.out}")
    return EXIT_OK


def cmd_align(args) -> int:
    cfg = _config(args)
    gold = pipeline.load_banks(args.gold)
    gen = pipeline.load_banks(args.gen)
    topics = sorted(set(gold) & set(gen)) if not args.topic else [args.topic]
    providers = pipeline.Providers(cfg, dry_run=args.dry_run)
    for t in topics:
        if t not in gold or t not in gen:
            raise ContractError(f"topic {t} missing from one of the banks")
        gq = {n.nugget_id: n.question for n in gold[t].selected}
        nq = {n.nugget_id: n.question for n in gen[t].selected}
        pairs = stable_match(gq, nq, providers.embedder)
        out = Path(args.out) / pipeline.topic_dirname(t) if len(topics) > 1 else Path(args.out)
        write_alignment(out, pairs, args.threshold, unmatched_gold(pairs, gq))
        print(f"{t}: {len(pairs)} pairs -> {out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the flags without defaults so values given before
        # the subcommand are not overwritten
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--config", default=d(None), help="pipeline TOML file")
        g.add_argument("--seed", type=int, default=d(None), help="override the configured seed")
        g.add_argument("--parallelism", type=int, default=d(None), help="worker threads")
        g.add_argument("--dry-run", action="store_true", default=d(False), help="count provider calls without making them")
        g.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return g

    common = global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="nuggetbank", description=__doc__.splitlines()[0], parents=[global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=fn)
        return sp

    sp = add("validate", cmd_validate, "check a topic/document/ranking collection")
    sp.add_argument("--topics")
    sp.add_argument("--documents")
    sp.add_argument("--ranking")

    for name, fn, help_ in (
        ("generate", cmd_generate, "run stages 1, 2A, 2B and 3"),
        ("select", cmd_select, "re-run selection over stored refined nuggets"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("--method", choices=["dogmatiq", "common", "sample"])
        sp.add_argument("--cap", type=int)
        sp.add_argument("--out", help="output directory (overrides paths.output_dir)")
        sp.add_argument("--svm-model")
        sp.add_argument("--cosine-threshold", type=float)
        sp.add_argument("--skip-llm-verify", action="store_true")
        sp.add_argument("--top-k-docs", type=int)
        sp.add_argument("--uninformative-pattern-file")
        sp.add_argument("--stage1-only", action="store_true")

    sp = add("train-svm", cmd_train_svm, "train the criteria ranker")
    sp.add_argument("--positives", required=True, help="criteria.jsonl of positive examples")
    sp.add_argument("--negatives", required=True, help="criteria.jsonl of negative examples")
    sp.add_argument("--holdout-positives")
    sp.add_argument("--holdout-negatives")
    sp.add_argument("--C", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", default="svm_model.json")

    sp = add("judge", cmd_judge, "judge reports against banks")
    sp.add_argument("--banks", required=True, help="bank file or directory")
    sp.add_argument("--reports")
    sp.add_argument("--label", default="")
    sp.add_argument("--out", default="judgments.jsonl")

    for name, fn, help_, default_out in (
        ("score", cmd_score, "per-topic recall matrix", "scores.csv"),
        ("leaderboard", cmd_leaderboard, "macro-averaged leaderboard", "leaderboard.csv"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("--banks", required=True)
        sp.add_argument("--reports")
        sp.add_argument("--judgments", required=True)
        sp.add_argument("--judgment-format", choices=["native", "argue_export"], default="native")
        sp.add_argument("--missing-policy", choices=["zero", "skip"])
        sp.add_argument("--label", default="")
        sp.add_argument("--out", default=default_out)

    sp = add("evaluate", cmd_evaluate, "judge, score and rank in one step")
    sp.add_argument("--banks", required=True)
    sp.add_argument("--reports")
    sp.add_argument("--judgments", help="import these instead of judging")
    sp.add_argument("--judgment-format", choices=["native", "argue_export"], default="native")
    sp.add_argument("--missing-policy", choices=["zero", "skip"])
    sp.add_argument("--label", default="")
    sp.add_argument("--out", default="eval")

    for name, fn, help_ in (
        ("correlate", cmd_correlate, "rank agreement between leaderboards"),
        ("subset", cmd_subset, "agreement on a run subset vs all runs"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("--reference", required=True, help="reference leaderboard.csv")
        sp.add_argument("--candidate", required=True, action="append", help="candidate leaderboard.csv (repeatable)")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--min-topics", type=int)
        sp.add_argument("--out", default="compare")
        if name == "subset":
            sp.add_argument("--runs-file", required=True, help="one run_id per line")

    sp = add("heatmap", cmd_heatmap, "pairwise rho/tau across several leaderboards")
    sp.add_argument("leaderboards", nargs="+")
    sp.add_argument("--out", default="compare")

    sp = add("scatter", cmd_scatter, "plot-ready score pairs")
    sp.add_argument("--reference", required=True)
    sp.add_argument("--candidate", required=True)
    sp.add_argument("--level", choices=["system", "topic"], default="system")
    sp.add_argument("--out", default="scatter.csv")

    sp = add("align", cmd_align, "stable-match generated nuggets to gold nuggets")
    sp.add_argument("--gold", required=True)
    sp.add_argument("--gen", required=True)
    sp.add_argument("--topic")
    sp.add_argument("--threshold", type=float, default=DEFAULT_CLEAR_THRESHOLD)
    sp.add_argument("--out", default="align")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ContractError, FormatError, TrainingError, rankstats.InsufficientDataError,
            rankstats.UndefinedCorrelationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
