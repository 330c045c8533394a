"""Pointwise re-ranking: input rendering, scorer contracts, and scorers.

A scorer is a callable taking a batch of :class:`RenderedInput` and
returning one relevance probability in [0, 1] per input, order-aligned and
deterministic. Two implementations ship here: a self-contained lexical
scorer backed by the inverted index, and a client for a remote scoring
service speaking the ``POST /score`` JSON protocol
(request ``{"inputs": [...]}``, response ``{"scores": [...]}``).
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import requests

from .datamodel import ConversationalQuery, Passage, PassageCollection, RankedList, RunEntry
from .errors import ContractViolation, InputError, RemoteScoringError
from .retrieval import InvertedIndex

logger = logging.getLogger(__name__)

DEFAULT_SEPARATOR = "<extra_id_10>"
DEFAULT_QUERY_BUDGET = 128
DEFAULT_DOC_BUDGET = 384
DEFAULT_RERANK_DEPTH = 100

_QUERY_MARKER = "Query: "
_CONTEXT_MARKER = " Context: "
_DOCUMENT_MARKER = " Document: "
_RELEVANT_MARKER = " Relevant:"

# smallest score step representable at run-file precision
_SCORE_STEP = 1e-6


@dataclass(frozen=True)
class TokenBudgets:
    """Whitespace-token limits for the two variable template segments.

    The template keywords themselves do not count against either budget.
    """

    query: int = DEFAULT_QUERY_BUDGET
    doc: int = DEFAULT_DOC_BUDGET

    def __post_init__(self) -> None:
        if self.query < 1 or self.doc < 1:
            raise InputError(f"token budgets must be positive: {self}")


@dataclass(frozen=True)
class RenderedInput:
    """A query-passage pair rendered into the text-to-text template.

    ``passage_id`` is local plumbing for index-backed scorers; only ``text``
    crosses the wire to remote scorers.
    """

    text: str
    query_budget: int
    doc_budget: int
    passage_id: str | None = None


Scorer = Callable[[Sequence[RenderedInput]], list[float]]


def render_input(
    query: ConversationalQuery,
    passage: Passage,
    separator: str = DEFAULT_SEPARATOR,
    budgets: TokenBudgets = TokenBudgets(),
) -> RenderedInput:
    """Render ``Query: <utterance> Context: <joined history> Document:
    <passage> Relevant:``.

    The context joins the history in chronological order with the separator
    token. Whitespace inside every segment is normalized to single spaces.
    When over budget, the document loses tokens from its end and the context
    from its oldest end; only if the utterance alone exceeds the query
    budget is its own tail truncated.
    """
    query_tokens = query.utterance.split()
    context_tokens = f" {separator} ".join(query.history).split()
    overflow = len(query_tokens) + len(context_tokens) - budgets.query
    if overflow > 0:
        context_tokens = context_tokens[min(overflow, len(context_tokens)):]
        if len(query_tokens) > budgets.query:
            query_tokens = query_tokens[: budgets.query]
    doc_tokens = passage.text.split()[: budgets.doc]
    text = (
        f"{_QUERY_MARKER}{' '.join(query_tokens)}"
        f"{_CONTEXT_MARKER}{' '.join(context_tokens)}"
        f"{_DOCUMENT_MARKER}{' '.join(doc_tokens)}"
        f"{_RELEVANT_MARKER}"
    )
    return RenderedInput(
        text=text,
        query_budget=budgets.query,
        doc_budget=budgets.doc,
        passage_id=passage.id,
    )


def split_rendered(text: str) -> tuple[str, str, str]:
    """Recover the (query, context, document) segments of a rendered input."""
    if not text.startswith(_QUERY_MARKER) or not text.endswith(_RELEVANT_MARKER):
        raise ContractViolation(f"not a rendered input: {text[:60]!r}")
    body = text[len(_QUERY_MARKER): -len(_RELEVANT_MARKER)]
    context_at = body.find(_CONTEXT_MARKER)
    document_at = body.find(_DOCUMENT_MARKER, context_at + 1)
    if context_at < 0 or document_at < 0:
        raise ContractViolation(f"rendered input is missing a marker: {text[:60]!r}")
    return (
        body[:context_at],
        body[context_at + len(_CONTEXT_MARKER): document_at],
        body[document_at + len(_DOCUMENT_MARKER):],
    )


def check_scores(scores: Sequence[float], expected: int, source: str) -> list[float]:
    """Enforce the scorer contract: one finite score in [0, 1] per input."""
    if len(scores) != expected:
        raise ContractViolation(
            f"{source} returned {len(scores)} scores for {expected} inputs"
        )
    validated = []
    for value in scores:
        value = float(value)
        if not math.isfinite(value) or not 0.0 <= value <= 1.0:
            raise ContractViolation(f"{source} returned out-of-range score {value!r}")
        validated.append(value)
    return validated


def _mean_match_score(index: InvertedIndex) -> float:
    """Mean BM25 contribution of a single posting; the temperature that keeps
    the logistic squash of typical match scores away from saturation."""
    total = 0.0
    count = 0
    for term, pairs in index.postings.items():
        idf = index._idf(term)
        for passage_id, tf in pairs:
            total += index._contribution(1, idf, tf, index._length_norm(passage_id))
            count += 1
    return total / count if count else 1.0


def lexical_scorer(index: InvertedIndex, temperature: float | None = None) -> Scorer:
    """Deterministic stand-in for a neural scorer.

    Scores a rendered input as sigmoid(bm25 / temperature), where the BM25
    query is the union of the rendered query and context terms and the
    passage is looked up in the index by id. A passage sharing no terms with
    the query and context scores exactly 0.5.
    """
    tau = float(temperature) if temperature is not None else _mean_match_score(index)
    if tau <= 0:
        raise InputError(f"temperature must be positive, got {tau}")

    def score_batch(inputs: Sequence[RenderedInput]) -> list[float]:
        scores = []
        for item in inputs:
            if item.passage_id is None:
                raise ContractViolation(
                    "lexical scorer needs rendered inputs carrying passage ids"
                )
            query_segment, context_segment, _ = split_rendered(item.text)
            terms = sorted(
                set(index.analyzer.tokenize(query_segment))
                | set(index.analyzer.tokenize(context_segment))
            )
            raw = index.bm25_score(terms, item.passage_id)
            scores.append(1.0 / (1.0 + math.exp(-raw / tau)))
        return scores

    return score_batch


def remote_scorer(
    endpoint: str,
    batch_size: int = 64,
    timeout: float = 30.0,
    retries: int = 3,
    max_in_flight: int = 1,
) -> Scorer:
    """Client for a remote scoring service.

    Splits inputs into chunks of at most ``batch_size``, preserves order
    across chunks, and validates the [0, 1] contract on receipt. At most
    ``max_in_flight`` requests run concurrently. A chunk that still fails
    after ``retries`` re-attempts raises RemoteScoringError carrying its
    index; an out-of-range or misaligned response raises ContractViolation
    immediately.
    """
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    if max_in_flight < 1:
        raise InputError(f"max_in_flight must be >= 1, got {max_in_flight}")
    url = endpoint.rstrip("/") + "/score"
    session = requests.Session()

    def post_chunk(chunk_index: int, texts: list[str]) -> list[float]:
        last_error: Exception | None = None
        for attempt in range(retries + 1):
            if attempt:
                time.sleep(min(0.05 * 2 ** (attempt - 1), 1.0))
            try:
                response = session.post(url, json={"inputs": texts}, timeout=timeout)
                response.raise_for_status()
                payload = response.json()
                scores = payload["scores"]
            except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
                last_error = exc
                continue
            return check_scores(scores, len(texts), f"scoring endpoint {url}")
        raise RemoteScoringError(
            f"chunk {chunk_index} failed after {retries + 1} attempts "
            f"against {url}: {last_error}",
            chunk_index=chunk_index,
        )

    def score_batch(inputs: Sequence[RenderedInput]) -> list[float]:
        texts = [item.text for item in inputs]
        chunks = [texts[i: i + batch_size] for i in range(0, len(texts), batch_size)]
        if not chunks:
            return []
        if max_in_flight == 1:
            results = [post_chunk(i, chunk) for i, chunk in enumerate(chunks)]
        else:
            with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
                futures = [
                    pool.submit(post_chunk, i, chunk) for i, chunk in enumerate(chunks)
                ]
                results = [future.result() for future in futures]
        return [score for chunk_scores in results for score in chunk_scores]

    return score_batch


def rerank(
    candidates: RankedList,
    query: ConversationalQuery,
    scorer: Scorer,
    collection: PassageCollection,
    depth: int = DEFAULT_RERANK_DEPTH,
    separator: str = DEFAULT_SEPARATOR,
    budgets: TokenBudgets = TokenBudgets(),
) -> RankedList:
    """Re-score the top ``depth`` candidates and re-sort them by scorer score
    (ties by ascending passage id); the remainder keeps its original relative
    order below the re-ranked block.

    The output is a permutation of the input's passage ids. Block entries
    carry their scorer scores; tail entries are remapped to strictly
    decreasing scores just below the block minimum.
    """
    if depth < 1:
        raise InputError(f"rerank depth must be >= 1, got {depth}")
    if not candidates.entries:
        return candidates
    head = candidates.entries[:depth]
    tail = candidates.entries[depth:]
    inputs = [
        render_input(query, collection.get(entry.passage_id), separator, budgets)
        for entry in head
    ]
    try:
        scores = scorer(inputs)
    except (ContractViolation, InputError) as exc:
        raise type(exc)(f"while scoring query {candidates.query_id}: {exc}") from exc
    scores = check_scores(scores, len(inputs), "scorer")

    block = sorted(
        zip(head, scores),
        key=lambda pair: (-round(pair[1], 6), pair[0].passage_id),
    )
    entries: list[RunEntry] = [
        RunEntry(entry.passage_id, position, score)
        for position, (entry, score) in enumerate(block, start=1)
    ]
    if tail:
        floor = round(min(score for _, score in block), 6)
        for offset, entry in enumerate(tail, start=1):
            entries.append(
                RunEntry(
                    entry.passage_id,
                    len(head) + offset,
                    round(floor - offset * _SCORE_STEP, 6),
                )
            )
    return RankedList(candidates.query_id, tuple(entries))
