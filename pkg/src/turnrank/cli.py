"""Command-line surface.

Subcommands: index, search, rerank, fuse, label, emit, eval, bench.
Exit codes: 0 success, 1 input error, 2 contract violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .datamodel import (
    RankedList,
    parse_corpus,
    parse_qrels,
    parse_topics,
    read_run,
    write_run,
)
from .errors import ContractViolation, InputError
from .evaluation import measure_latency, ndcg_at_k, paired_t_test
from .fusion import DEFAULT_RRF_K, rrf
from .labeling import LabelingConfig, sample_labels
from .pipeline import (
    PipelineConfig,
    load_pipeline_config,
    run_cascade,
    run_labeling,
)
from .retrieval import DEFAULT_B, DEFAULT_K1, Analyzer, InvertedIndex, build_index
from .scoring import TokenBudgets, lexical_scorer, remote_scorer, rerank

logger = logging.getLogger(__name__)


def _corpus_format(args) -> str | None:
    explicit = getattr(args, "corpus_format", None)
    if explicit:
        return explicit
    corpus = getattr(args, "corpus", None)
    if corpus is None:
        return None
    return "jsonl" if Path(corpus).suffix == ".jsonl" else "tsv"


def _pipeline_overrides(args) -> dict:
    return {
        "corpus": args.corpus,
        "topics": args.topics,
        "corpus_format": args.corpus_format,
        "first_stage": args.first_stage,
        "scorer": args.scorer,
        "rerank_depth": args.depth,
        "output_dir": args.out_dir,
        "seed": args.seed,
        "workers": args.workers,
        "run_tag": args.tag,
        "separator": args.separator,
        "query_budget": args.query_budget,
        "doc_budget": args.doc_budget,
        "first_stage_depth": getattr(args, "first_stage_depth", None),
        "reranked_depth": getattr(args, "reranked_depth", None),
        "label_count": getattr(args, "label_count", None),
        "filter_depth": getattr(args, "filter_depth", None),
    }


def _add_pipeline_flags(sub: argparse.ArgumentParser, labeling: bool) -> None:
    sub.add_argument("--config", help="TOML config file; flags override its values")
    sub.add_argument("--corpus", help="corpus file (TSV or JSONL)")
    sub.add_argument("--topics", help="topics JSONL file")
    sub.add_argument("--corpus-format", choices=["tsv", "jsonl"], dest="corpus_format")
    sub.add_argument("--first-stage", dest="first_stage",
                     help="'bm25' or 'import:<run path>'")
    sub.add_argument("--scorer", help="'lexical' or 'remote:<url>'")
    sub.add_argument("--depth", type=int, help="re-ranking depth (default 100)")
    sub.add_argument("--out-dir", dest="out_dir", help="output directory")
    sub.add_argument("--seed", type=int, help="root random seed")
    sub.add_argument("--workers", type=int, help="parallel query workers")
    sub.add_argument("--tag", help="run tag written to output run files")
    sub.add_argument("--separator", help="history separator token")
    sub.add_argument("--query-budget", dest="query_budget", type=int)
    sub.add_argument("--doc-budget", dest="doc_budget", type=int)
    sub.add_argument("--first-stage-depth", dest="first_stage_depth", type=int,
                     help="BM25 first-stage retrieval depth (default 1000)")
    if labeling:
        sub.add_argument("--reranked-depth", dest="reranked_depth", type=int)
        sub.add_argument("--label-count", dest="label_count", type=int)
        sub.add_argument("--filter-depth", dest="filter_depth", type=int)


def cmd_index(args) -> int:
    collection = parse_corpus(args.corpus, _corpus_format(args))
    index = build_index(collection, Analyzer(), args.k1, args.b)
    index.save(args.out)
    print(
        f"indexed {index.doc_count} passages, {len(index.postings)} terms -> {args.out}"
    )
    return 0


def cmd_search(args) -> int:
    index = InvertedIndex.load(args.index)
    ranked = index.search(args.query, args.top, query_id=args.query_id)
    if args.out:
        write_run({ranked.query_id: ranked}, args.tag, args.out)
        print(f"wrote {len(ranked)} results -> {args.out}")
    else:
        for entry in ranked:
            print(
                f"{ranked.query_id} Q0 {entry.passage_id} {entry.rank} "
                f"{entry.score:.6f} {args.tag}"
            )
    return 0


def cmd_rerank(args) -> int:
    config = load_pipeline_config(args.config, _pipeline_overrides(args))
    result = run_cascade(config)
    print(f"wrote {len(result.runs)} query results -> {result.run_path}")
    print(f"re-ranking latency: {result.latency.mean_ms:.1f} ms/q")
    return 0


def cmd_fuse(args) -> int:
    if len(args.runs) < 2:
        raise InputError("fuse needs at least two run files")
    loaded = [read_run(path) for path in args.runs]
    query_ids = sorted(set().union(*(set(r) for r in loaded)))
    fused = {}
    for qid in query_ids:
        lists = [runs.get(qid, RankedList(qid, ())) for runs in loaded]
        fused[qid] = rrf(lists, args.k)
    write_run(fused, args.tag, args.out)
    print(f"fused {len(args.runs)} runs over {len(fused)} queries -> {args.out}")
    return 0


def cmd_label(args) -> int:
    config = load_pipeline_config(args.config, _pipeline_overrides(args))
    result = run_labeling(config)
    print(f"query view    -> {result.query_view_path}")
    print(f"answer view   -> {result.answer_view_path}")
    print(f"ensemble view -> {result.ensemble_path}")
    print(f"training file -> {result.training_path} ({result.training_lines} lines)")
    if result.skipped_queries:
        print(f"skipped (no rewrite): {', '.join(result.skipped_queries)}")
    return 0


def cmd_emit(args) -> int:
    from .labeling import emit_training_file

    collection = parse_corpus(args.corpus, _corpus_format(args))
    queries, _ = parse_topics(args.topics)
    queries_by_id = {q.query_id: q for q in queries}
    runs = read_run(args.ensemble_run)
    config = LabelingConfig(
        reranked_depth=args.reranked_depth,
        label_count=args.label_count,
        seed=args.seed,
    )
    labeled = [
        sample_labels(runs[qid], config) for qid in sorted(runs)
    ]
    budgets = TokenBudgets(query=args.query_budget, doc=args.doc_budget)
    lines = emit_training_file(
        labeled, queries_by_id, collection, args.out,
        separator=args.separator, budgets=budgets,
    )
    print(f"wrote {lines} training lines -> {args.out}")
    return 0


def _format_eval_table(rows: list[dict]) -> str:
    headers = list(rows[0].keys())
    table = [headers] + [[str(row[h]) for h in headers] for row in rows]
    widths = [max(len(line[col]) for line in table) for col in range(len(headers))]
    return "\n".join(
        "  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip()
        for line in table
    )


def cmd_eval(args) -> int:
    runs = read_run(args.run)
    qrels = parse_qrels(args.qrels)
    cutoffs = [int(c) for c in args.ndcg_cut.split(",") if c.strip()]
    if not cutoffs:
        raise InputError(f"no nDCG cutoffs in {args.ndcg_cut!r}")
    baseline = read_run(args.compare) if args.compare else None

    rows = []
    per_query_lines = ["query_id\tmetric\tvalue" + ("\tbaseline" if baseline else "")]
    for k in cutoffs:
        report = ndcg_at_k(runs, qrels, k)
        row = {"metric": f"nDCG@{k}", "mean": f"{report.mean:.4f}",
               "queries": len(report.per_query)}
        if baseline is not None:
            base = ndcg_at_k(baseline, qrels, k)
            # queries with no positive judgment have no defined ideal; keep
            # them out of the significance test but report them in the means
            testable_a = {q: v for q, v in report.per_query.items()
                          if q not in report.zero_idcg}
            testable_b = {q: v for q, v in base.per_query.items()
                          if q not in base.zero_idcg}
            test = paired_t_test(testable_a, testable_b)
            row.update({
                "baseline": f"{base.mean:.4f}",
                "diff": f"{report.mean - base.mean:+.4f}",
                "t": f"{test.t:.3f}",
                "p": f"{test.p:.4f}",
                "n": test.n,
            })
            for qid in sorted(report.per_query):
                per_query_lines.append(
                    f"{qid}\tnDCG@{k}\t{report.per_query[qid]:.6f}"
                    f"\t{base.per_query.get(qid, 0.0):.6f}"
                )
        else:
            for qid in sorted(report.per_query):
                per_query_lines.append(f"{qid}\tnDCG@{k}\t{report.per_query[qid]:.6f}")
        rows.append(row)

    print(_format_eval_table(rows))
    if args.per_query:
        Path(args.per_query).write_text(
            "\n".join(per_query_lines) + "\n", encoding="utf-8"
        )
        print(f"per-query scores -> {args.per_query}")
    return 0


def cmd_bench(args) -> int:
    config = load_pipeline_config(args.config, _pipeline_overrides(args))
    config.validate_paths()
    collection = parse_corpus(config.corpus, config.corpus_format)
    queries, _ = parse_topics(config.topics)
    stage_kind, stage_value = config.first_stage_spec()

    index = build_index(collection, Analyzer(), config.k1, config.b)
    scorer_kind, url = config.scorer_spec()
    scorer = lexical_scorer(index) if scorer_kind == "lexical" else remote_scorer(url)
    imported = read_run(stage_value) if stage_kind == "import" else {}

    # candidates are prepared up front so only the re-ranking stage is timed
    candidates = {}
    for query in queries:
        if stage_kind == "bm25":
            candidates[query.query_id] = index.search(
                " ".join((query.utterance, *query.history)),
                config.labeling.first_stage_depth,
                query.query_id,
            )
        else:
            candidates[query.query_id] = imported.get(
                query.query_id, RankedList(query.query_id, ())
            )

    def stage(query):
        return rerank(
            candidates[query.query_id], query, scorer, collection,
            depth=config.rerank_depth, separator=config.separator,
            budgets=config.budgets,
        )

    report = measure_latency(stage, queries)
    print(f"re-ranking latency over {len(queries)} queries: {report.mean_ms:.2f} ms/q")
    if args.out:
        lines = ["query_id\tms"]
        lines += [f"{qid}\t{ms:.3f}" for qid, ms in report.per_query_ms.items()]
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"per-query latency -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turnrank",
        description="Conversational passage-ranking pipelines.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress and warnings to stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("index", help="build and save an inverted index")
    sub.add_argument("--corpus", required=True)
    sub.add_argument("--corpus-format", choices=["tsv", "jsonl"], dest="corpus_format")
    sub.add_argument("--out", required=True)
    sub.add_argument("--k1", type=float, default=DEFAULT_K1)
    sub.add_argument("--b", type=float, default=DEFAULT_B)
    sub.set_defaults(handler=cmd_index)

    sub = commands.add_parser("search", help="BM25 top-N search against a saved index")
    sub.add_argument("--index", required=True)
    sub.add_argument("--query", required=True)
    sub.add_argument("--query-id", dest="query_id", default="q0")
    sub.add_argument("--top", type=int, default=10)
    sub.add_argument("--out", help="write a run file instead of printing")
    sub.add_argument("--tag", default="bm25")
    sub.set_defaults(handler=cmd_search)

    sub = commands.add_parser("rerank", help="run the retrieve-then-rerank cascade")
    _add_pipeline_flags(sub, labeling=False)
    sub.set_defaults(handler=cmd_rerank)

    sub = commands.add_parser("fuse", help="reciprocal-rank fuse two or more runs")
    sub.add_argument("runs", nargs="+", help="run files to fuse")
    sub.add_argument("--k", type=float, default=DEFAULT_RRF_K)
    sub.add_argument("--out", required=True)
    sub.add_argument("--tag", default="rrf")
    sub.set_defaults(handler=cmd_fuse)

    sub = commands.add_parser(
        "label", help="build view runs and emit a pseudo-labeled training file"
    )
    _add_pipeline_flags(sub, labeling=True)
    sub.set_defaults(handler=cmd_label)

    sub = commands.add_parser(
        "emit", help="sample labels from an ensemble run and emit training lines"
    )
    sub.add_argument("--ensemble-run", dest="ensemble_run", required=True)
    sub.add_argument("--topics", required=True)
    sub.add_argument("--corpus", required=True)
    sub.add_argument("--corpus-format", choices=["tsv", "jsonl"], dest="corpus_format")
    sub.add_argument("--out", required=True)
    sub.add_argument("--label-count", dest="label_count", type=int,
                     default=LabelingConfig.label_count)
    sub.add_argument("--reranked-depth", dest="reranked_depth", type=int,
                     default=LabelingConfig.reranked_depth)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--separator", default="<extra_id_10>")
    sub.add_argument("--query-budget", dest="query_budget", type=int,
                     default=TokenBudgets.query)
    sub.add_argument("--doc-budget", dest="doc_budget", type=int,
                     default=TokenBudgets.doc)
    sub.set_defaults(handler=cmd_emit)

    sub = commands.add_parser("eval", help="nDCG evaluation and run comparison")
    sub.add_argument("--run", required=True)
    sub.add_argument("--qrels", required=True)
    sub.add_argument("--ndcg-cut", dest="ndcg_cut", default="3,100")
    sub.add_argument("--compare", help="baseline run for paired t-tests")
    sub.add_argument("--per-query", dest="per_query",
                     help="write per-query scores to this TSV")
    sub.set_defaults(handler=cmd_eval)

    sub = commands.add_parser("bench", help="measure re-ranking latency (ms/q)")
    _add_pipeline_flags(sub, labeling=False)
    sub.add_argument("--out", help="write per-query latency TSV")
    sub.set_defaults(handler=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
