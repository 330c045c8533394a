"""Cascade orchestration: configuration, first stage, re-rank, outputs.

A pipeline run is described by a flat TOML config file; CLI flags override
file values, which override defaults. ``TURNRANK_SEED`` overrides the seed
and ``TURNRANK_ENDPOINT`` the remote scorer URL (CLI flags still win).

Queries are independent work units handled by a bounded thread pool; output
files are written from the collected results sorted by query id, so file
contents are identical regardless of worker count. All randomness flows
from the single root seed, which is recorded as a ``# seed=<n>`` header in
every run file written.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .datamodel import (
    ConversationalQuery,
    PassageCollection,
    RankedList,
    parse_corpus,
    parse_topics,
    read_run,
    write_run,
)
from .errors import InputError
from .evaluation import LatencyReport
from .fusion import ensemble_filter
from .labeling import (
    LabeledSet,
    LabelingConfig,
    build_answer_view,
    build_query_view,
    emit_training_file,
    sample_labels,
)
from .retrieval import DEFAULT_B, DEFAULT_K1, Analyzer, InvertedIndex, build_index
from .scoring import (
    DEFAULT_RERANK_DEPTH,
    DEFAULT_SEPARATOR,
    Scorer,
    TokenBudgets,
    lexical_scorer,
    remote_scorer,
    rerank,
)

logger = logging.getLogger(__name__)

ENV_SEED = "TURNRANK_SEED"
ENV_ENDPOINT = "TURNRANK_ENDPOINT"

_CONFIG_KEYS = {
    "corpus",
    "corpus_format",
    "topics",
    "first_stage",
    "scorer",
    "rerank_depth",
    "output_dir",
    "seed",
    "k1",
    "b",
    "separator",
    "query_budget",
    "doc_budget",
    "workers",
    "run_tag",
    "first_stage_depth",
    "reranked_depth",
    "label_count",
    "filter_depth",
}


@dataclass
class PipelineConfig:
    """Everything a cascade or labeling run needs, validated up front."""

    corpus: Path
    topics: Path
    corpus_format: str | None = None
    first_stage: str = "bm25"
    scorer: str = "lexical"
    rerank_depth: int = DEFAULT_RERANK_DEPTH
    output_dir: Path = Path("out")
    seed: int = 0
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    separator: str = DEFAULT_SEPARATOR
    budgets: TokenBudgets = field(default_factory=TokenBudgets)
    workers: int = 1
    run_tag: str = "turnrank"
    labeling: LabelingConfig = field(default_factory=LabelingConfig)

    def __post_init__(self) -> None:
        self.corpus = Path(self.corpus)
        self.topics = Path(self.topics)
        self.output_dir = Path(self.output_dir)
        if self.corpus_format is None:
            self.corpus_format = "jsonl" if self.corpus.suffix == ".jsonl" else "tsv"
        if self.rerank_depth < 1:
            raise InputError(f"rerank depth must be >= 1, got {self.rerank_depth}")
        if self.workers < 1:
            raise InputError(f"worker count must be >= 1, got {self.workers}")
        # one root seed governs every random draw
        self.labeling = replace(self.labeling, seed=self.seed)

    def validate_paths(self) -> None:
        for path, what in ((self.corpus, "corpus"), (self.topics, "topics")):
            if not path.exists():
                raise InputError(f"{what} file not found: {path}")
        kind, value = self.first_stage_spec()
        if kind == "import" and not Path(value).exists():
            raise InputError(f"imported run file not found: {value}")

    def first_stage_spec(self) -> tuple[str, str]:
        if self.first_stage == "bm25":
            return "bm25", ""
        if self.first_stage.startswith("import:"):
            path = self.first_stage[len("import:"):]
            if not path:
                raise InputError("first_stage 'import:' needs a run file path")
            return "import", path
        raise InputError(
            f"first_stage must be 'bm25' or 'import:<run path>', got {self.first_stage!r}"
        )

    def scorer_spec(self) -> tuple[str, str]:
        if self.scorer == "lexical":
            return "lexical", ""
        if self.scorer.startswith("remote:"):
            url = self.scorer[len("remote:"):]
            if not url:
                raise InputError("scorer 'remote:' needs an endpoint URL")
            return "remote", url
        raise InputError(
            f"scorer must be 'lexical' or 'remote:<url>', got {self.scorer!r}"
        )


def _load_toml(path: Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with path.open("rb") as handle:
        try:
            return tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"{path}: invalid config: {exc}") from exc


def load_pipeline_config(
    config_path: str | Path | None = None,
    overrides: Mapping[str, object] | None = None,
    env: Mapping[str, str] = os.environ,
) -> PipelineConfig:
    """Merge config file, environment, and CLI overrides into a config.

    Precedence: CLI overrides > environment > config file > defaults.
    ``overrides`` entries with value None are treated as unset.
    """
    values: dict = {}
    if config_path is not None:
        values.update(_load_toml(Path(config_path)))
        unknown = set(values) - _CONFIG_KEYS
        if unknown:
            raise InputError(
                f"{config_path}: unknown config keys: {', '.join(sorted(unknown))}"
            )
    if ENV_SEED in env:
        try:
            values["seed"] = int(env[ENV_SEED])
        except ValueError as exc:
            raise InputError(f"{ENV_SEED} must be an integer: {env[ENV_SEED]!r}") from exc
    env_endpoint = env.get(ENV_ENDPOINT)
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in _CONFIG_KEYS:
                raise InputError(f"unknown config override: {key}")
            values[key] = value

    scorer = str(values.get("scorer", "lexical"))
    if env_endpoint:
        if scorer in ("remote", "remote:"):
            # a bare remote spec defers to the environment for the URL
            scorer = f"remote:{env_endpoint}"
        elif scorer.startswith("remote:") and (overrides or {}).get("scorer") is None:
            # the environment beats the config file but not an explicit flag
            scorer = f"remote:{env_endpoint}"
    values["scorer"] = scorer

    for required in ("corpus", "topics"):
        if required not in values:
            raise InputError(f"config is missing required key: {required}")

    # unspecified labeling depths cap at the first-stage depth so that a
    # shallow cascade-only config stays self-consistent
    first_stage_depth = int(
        values.get("first_stage_depth", LabelingConfig.first_stage_depth)
    )
    reranked_depth = (
        int(values["reranked_depth"])
        if "reranked_depth" in values
        else min(LabelingConfig.reranked_depth, first_stage_depth)
    )
    label_count = (
        int(values["label_count"])
        if "label_count" in values
        else min(LabelingConfig.label_count, reranked_depth)
    )
    labeling = LabelingConfig(
        first_stage_depth=first_stage_depth,
        reranked_depth=reranked_depth,
        label_count=label_count,
        filter_depth=(
            int(values["filter_depth"]) if values.get("filter_depth") is not None else None
        ),
    )
    budgets = TokenBudgets(
        query=int(values.get("query_budget", TokenBudgets.query)),
        doc=int(values.get("doc_budget", TokenBudgets.doc)),
    )
    return PipelineConfig(
        corpus=Path(str(values["corpus"])),
        topics=Path(str(values["topics"])),
        corpus_format=values.get("corpus_format"),
        first_stage=str(values.get("first_stage", "bm25")),
        scorer=scorer,
        rerank_depth=int(values.get("rerank_depth", DEFAULT_RERANK_DEPTH)),
        output_dir=Path(str(values.get("output_dir", "out"))),
        seed=int(values.get("seed", 0)),
        k1=float(values.get("k1", DEFAULT_K1)),
        b=float(values.get("b", DEFAULT_B)),
        separator=str(values.get("separator", DEFAULT_SEPARATOR)),
        budgets=budgets,
        workers=int(values.get("workers", 1)),
        run_tag=str(values.get("run_tag", "turnrank")),
        labeling=labeling,
    )


@dataclass(frozen=True)
class CascadeResult:
    runs: dict[str, RankedList]
    run_path: Path
    latency: LatencyReport


@dataclass(frozen=True)
class LabelingResult:
    query_view_path: Path
    answer_view_path: Path
    ensemble_path: Path
    training_path: Path
    training_lines: int
    labeled_sets: tuple[LabeledSet, ...]
    skipped_queries: tuple[str, ...]


def _make_scorer(
    config: PipelineConfig, index: InvertedIndex | None
) -> Scorer:
    kind, url = config.scorer_spec()
    if kind == "lexical":
        if index is None:
            raise InputError("the lexical scorer needs an index over the corpus")
        return lexical_scorer(index)
    return remote_scorer(url)


def _flatten(query: ConversationalQuery) -> str:
    """Utterance plus full history, space-joined, for first-stage retrieval."""
    return " ".join((query.utterance, *query.history))


def _pool_map(workers: int, fn, items):
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_cascade(config: PipelineConfig) -> CascadeResult:
    """Retrieve-then-rerank every conversational query and write the run.

    The first stage is either BM25 over the flattened conversational query
    (utterance plus history) or an imported run file; a topic query missing
    from an imported run yields an empty result with a warning.
    """
    config.validate_paths()
    collection = parse_corpus(config.corpus, config.corpus_format)
    queries, _ = parse_topics(config.topics)
    stage_kind, stage_value = config.first_stage_spec()
    scorer_kind, _ = config.scorer_spec()

    index: InvertedIndex | None = None
    if stage_kind == "bm25" or scorer_kind == "lexical":
        index = build_index(collection, Analyzer(), config.k1, config.b)
    imported: dict[str, RankedList] = {}
    if stage_kind == "import":
        imported = read_run(stage_value)

    scorer = _make_scorer(config, index)

    def first_stage(query: ConversationalQuery) -> RankedList:
        if stage_kind == "bm25":
            assert index is not None
            return index.search(
                _flatten(query), config.labeling.first_stage_depth, query.query_id
            )
        candidates = imported.get(query.query_id)
        if candidates is None:
            logger.warning(
                "query %s missing from imported run %s; emitting empty result",
                query.query_id,
                stage_value,
            )
            return RankedList(query.query_id, ())
        return candidates

    def process(query: ConversationalQuery) -> tuple[str, RankedList, float]:
        started = time.perf_counter()
        candidates = first_stage(query)
        result = rerank(
            candidates,
            query,
            scorer,
            collection,
            depth=config.rerank_depth,
            separator=config.separator,
            budgets=config.budgets,
        )
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        return query.query_id, result, elapsed_ms

    outcomes = _pool_map(config.workers, process, queries)
    runs = {qid: ranked for qid, ranked, _ in outcomes}
    per_query_ms = {qid: ms for qid, _, ms in outcomes}

    config.output_dir.mkdir(parents=True, exist_ok=True)
    run_path = config.output_dir / "cascade.run"
    write_run(runs, config.run_tag, run_path, seed=config.seed)
    latency = LatencyReport(
        per_query_ms=per_query_ms,
        mean_ms=sum(per_query_ms.values()) / len(per_query_ms) if per_query_ms else 0.0,
    )
    return CascadeResult(runs=runs, run_path=run_path, latency=latency)


def run_labeling(config: PipelineConfig) -> LabelingResult:
    """Build both views, ensemble them, sample labels, and emit the
    training file, plus the three inspection runs.

    Topic queries without a rewrite are skipped with a warning.
    """
    config.validate_paths()
    collection = parse_corpus(config.corpus, config.corpus_format)
    queries, sources = parse_topics(config.topics)
    queries_by_id = {q.query_id: q for q in queries}
    sources_by_id = {s.query_id: s for s in sources}

    skipped = tuple(q.query_id for q in queries if q.query_id not in sources_by_id)
    for query_id in skipped:
        logger.warning("query %s has no rewrite; skipped for labeling", query_id)

    index = build_index(collection, Analyzer(), config.k1, config.b)
    scorer = _make_scorer(config, index)
    label_config = config.labeling

    def process(source):
        query_view = build_query_view(
            source, index, scorer, collection, label_config,
            separator=config.separator, budgets=config.budgets,
        )
        answer_view = build_answer_view(
            source, index, scorer, collection, label_config,
            separator=config.separator, budgets=config.budgets,
        )
        ensemble = ensemble_filter(query_view, answer_view, label_config.filter_depth)
        labeled = None
        if ensemble.ranking.entries:
            labeled = sample_labels(ensemble, label_config)
        else:
            logger.warning(
                "query %s retrieved nothing; no labels generated", source.query_id
            )
        return source.query_id, query_view, answer_view, ensemble.ranking, labeled

    ordered_sources = sorted(sources, key=lambda s: s.query_id)
    outcomes = _pool_map(config.workers, process, ordered_sources)

    query_views = {qid: view for qid, view, _, _, _ in outcomes}
    answer_views = {qid: view for qid, _, view, _, _ in outcomes}
    ensembles = {qid: ranking for qid, _, _, ranking, _ in outcomes}
    labeled_sets = tuple(
        labeled for _, _, _, _, labeled in outcomes if labeled is not None
    )

    config.output_dir.mkdir(parents=True, exist_ok=True)
    query_view_path = config.output_dir / "query_view.run"
    answer_view_path = config.output_dir / "answer_view.run"
    ensemble_path = config.output_dir / "ensemble.run"
    training_path = config.output_dir / "train.tsv"
    write_run(query_views, f"{config.run_tag}-qview", query_view_path, seed=config.seed)
    write_run(answer_views, f"{config.run_tag}-aview", answer_view_path, seed=config.seed)
    write_run(ensembles, f"{config.run_tag}-ensemble", ensemble_path, seed=config.seed)
    lines = emit_training_file(
        labeled_sets,
        queries_by_id,
        collection,
        training_path,
        separator=config.separator,
        budgets=config.budgets,
    )
    return LabelingResult(
        query_view_path=query_view_path,
        answer_view_path=answer_view_path,
        ensemble_path=ensemble_path,
        training_path=training_path,
        training_lines=lines,
        labeled_sets=labeled_sets,
        skipped_queries=skipped,
    )
