"""Pseudo-label synthesis: two-view ranked lists, label sampling, and
text-to-text training-file emission.

For each rewritten query the pipeline builds a query-view list (retrieve
with the rewrite, re-rank, truncate) and an answer-view list (retrieve with
the rewrite concatenated to the turn's answer, re-rank against the rewrite
alone, truncate). The ensemble of the two views yields the list that labels
are sampled from: its top entries become pseudo-positives and a random
sample of the lower-ranked entries becomes pseudo-negatives.

Training lines pair the labels with the original multi-turn query, never
the rewrite; the rewrites exist only to create the labels.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .datamodel import (
    ConversationalQuery,
    LabelingSource,
    PassageCollection,
    RankedList,
)
from .errors import InputError
from .fusion import EnsembleList
from .retrieval import InvertedIndex
from .scoring import (
    DEFAULT_SEPARATOR,
    Scorer,
    TokenBudgets,
    render_input,
    rerank,
)

logger = logging.getLogger(__name__)

DEFAULT_FIRST_STAGE_DEPTH = 1000
DEFAULT_RERANKED_DEPTH = 200
DEFAULT_LABEL_COUNT = 40

POSITIVE_TARGET = "true"
NEGATIVE_TARGET = "false"


@dataclass(frozen=True)
class LabelingConfig:
    """Depths and sampling parameters for pseudo-label generation."""

    first_stage_depth: int = DEFAULT_FIRST_STAGE_DEPTH
    reranked_depth: int = DEFAULT_RERANKED_DEPTH
    label_count: int = DEFAULT_LABEL_COUNT
    seed: int = 0
    filter_depth: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.label_count <= self.reranked_depth <= self.first_stage_depth:
            raise InputError(
                "labeling depths must satisfy 0 < label_count <= reranked_depth "
                f"<= first_stage_depth, got {self}"
            )
        if self.filter_depth is not None and self.filter_depth < 1:
            raise InputError(f"filter_depth must be >= 1, got {self.filter_depth}")


@dataclass(frozen=True)
class LabeledSet:
    """Pseudo-positive and pseudo-negative passage ids for one query."""

    query_id: str
    positives: tuple[str, ...]
    negatives: tuple[str, ...]

    def __post_init__(self) -> None:
        overlap = set(self.positives) & set(self.negatives)
        if overlap:
            raise InputError(
                f"labels for {self.query_id} overlap: {sorted(overlap)}"
            )


def _stable_seed(seed: int, query_id: str) -> int:
    """Per-query RNG seed; stable across processes and platforms."""
    digest = hashlib.blake2b(
        f"{seed}/{query_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def _rewrite_as_query(source: LabelingSource) -> ConversationalQuery:
    """Wrap the rewrite as a single-turn query (no history) for rendering."""
    topic_id, _, _ = source.query_id.rpartition("_")
    return ConversationalQuery(
        topic_id=topic_id or source.query_id,
        turn=1,
        utterance=source.rewritten_query,
        history=(),
    )


def build_query_view(
    source: LabelingSource,
    index: InvertedIndex,
    scorer: Scorer,
    collection: PassageCollection,
    config: LabelingConfig = LabelingConfig(),
    separator: str = DEFAULT_SEPARATOR,
    budgets: TokenBudgets = TokenBudgets(),
) -> RankedList:
    """Retrieve with the rewritten query, re-rank every candidate with the
    rewrite as a single-turn query, and keep the top ``reranked_depth``."""
    candidates = index.search(
        source.rewritten_query, config.first_stage_depth, query_id=source.query_id
    )
    if not candidates.entries:
        return candidates
    reranked = rerank(
        candidates,
        _rewrite_as_query(source),
        scorer,
        collection,
        depth=len(candidates),
        separator=separator,
        budgets=budgets,
    )
    return reranked.truncate(config.reranked_depth)


def build_answer_view(
    source: LabelingSource,
    index: InvertedIndex,
    scorer: Scorer,
    collection: PassageCollection,
    config: LabelingConfig = LabelingConfig(),
    separator: str = DEFAULT_SEPARATOR,
    budgets: TokenBudgets = TokenBudgets(),
    answer_join: str = " ",
) -> RankedList:
    """Like :func:`build_query_view`, but the first stage retrieves with the
    rewrite concatenated to the answer, so answer terms can pull passages
    into the candidate set that the rewrite alone would miss. Re-ranking
    still scores against the rewrite alone.

    An empty answer degenerates to the query view, with a warning.
    """
    if not source.answer.strip():
        logger.warning(
            "query %s has no answer; answer view falls back to the query view",
            source.query_id,
        )
        return build_query_view(
            source, index, scorer, collection, config, separator, budgets
        )
    candidates = index.search(
        f"{source.rewritten_query}{answer_join}{source.answer}",
        config.first_stage_depth,
        query_id=source.query_id,
    )
    if not candidates.entries:
        return candidates
    reranked = rerank(
        candidates,
        _rewrite_as_query(source),
        scorer,
        collection,
        depth=len(candidates),
        separator=separator,
        budgets=budgets,
    )
    return reranked.truncate(config.reranked_depth)


def sample_labels(
    ensemble: EnsembleList | RankedList, config: LabelingConfig = LabelingConfig()
) -> LabeledSet:
    """Top ``label_count`` entries become positives; an equal number of
    negatives is sampled uniformly without replacement from the entries
    between there and ``reranked_depth``.

    Accepts either an ensemble or a bare ranked list (e.g. one re-read from
    a run file). Deterministic given the config seed: the RNG is seeded per
    query, so parallel label generation cannot change outputs.
    """
    ranking = ensemble.ranking if isinstance(ensemble, EnsembleList) else ensemble
    if not ranking.entries:
        raise InputError(f"cannot sample labels from an empty list ({ranking.query_id})")
    ids = ranking.passage_ids()
    k = config.label_count
    positives = ids[:k]
    pool = list(ids[k: config.reranked_depth])
    wanted = min(k, len(pool))
    if wanted < k:
        logger.warning(
            "query %s: only %d negatives available below rank %d (wanted %d)",
            ranking.query_id,
            wanted,
            k,
            k,
        )
    rng = random.Random(_stable_seed(config.seed, ranking.query_id))
    negatives = tuple(rng.sample(pool, wanted))
    return LabeledSet(ranking.query_id, tuple(positives), negatives)


def emit_training_file(
    labeled_sets: Iterable[LabeledSet],
    queries: Mapping[str, ConversationalQuery],
    collection: PassageCollection,
    path: str | Path,
    separator: str = DEFAULT_SEPARATOR,
    budgets: TokenBudgets = TokenBudgets(),
) -> int:
    """Write one ``<rendered input>\\t<true|false>`` line per labeled pair,
    grouped by query with positives first, and return the line count.

    Rendering uses the original conversational query (utterance plus
    history). Unresolvable query or passage ids abort with the id named.
    """
    path = Path(path)
    lines_written = 0
    with path.open("w", encoding="utf-8") as handle:
        for labeled in labeled_sets:
            query = queries.get(labeled.query_id)
            if query is None:
                raise InputError(
                    f"labeled set references unknown query id: {labeled.query_id}"
                )
            for passage_ids, target in (
                (labeled.positives, POSITIVE_TARGET),
                (labeled.negatives, NEGATIVE_TARGET),
            ):
                for passage_id in passage_ids:
                    rendered = render_input(
                        query, collection.get(passage_id), separator, budgets
                    )
                    handle.write(f"{rendered.text}\t{target}\n")
                    lines_written += 1
    return lines_written
