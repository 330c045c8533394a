"""Core domain types and the file formats that carry them.

Formats:
  corpus  TSV ``id<TAB>text`` or JSONL ``{"id": ..., "contents": ...}``
  topics  JSONL ``{"topic_id", "turn", "utterance", "rewrite"?, "answer"?}``
  runs    6-column TREC run format (``qid Q0 docid rank score tag``)
  qrels   4-column TREC qrels format (``qid 0 docid grade``)

Run scores are written with 6 decimal places. Ranked lists quantize their
scores to the same precision when constructed, so the in-memory ordering,
the invariant checks, and the on-disk representation always agree and
write/read round-trips are byte-identical.

All types are immutable after construction and safe to share across
concurrent readers.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple

from .errors import InputError

logger = logging.getLogger(__name__)

SCORE_DECIMALS = 6
MAX_GRADE = 4


def quantize_score(score: float) -> float:
    """Round a score to run-file precision; normalizes -0.0 to 0.0."""
    value = round(float(score), SCORE_DECIMALS)
    if not math.isfinite(value):
        raise InputError(f"scores must be finite, got {score!r}")
    return value + 0.0


@dataclass(frozen=True)
class Passage:
    """A retrievable unit of text with an opaque identifier."""

    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.id or any(ch.isspace() for ch in self.id):
            raise InputError(
                f"passage id must be non-empty and contain no whitespace: {self.id!r}"
            )


class PassageCollection:
    """An id-addressable, immutable set of passages."""

    def __init__(self, passages: Iterable[Passage]):
        by_id: dict[str, Passage] = {}
        for passage in passages:
            if passage.id in by_id:
                raise InputError(f"duplicate passage id: {passage.id}")
            by_id[passage.id] = passage
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._by_id

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._by_id.values())

    def get(self, passage_id: str) -> Passage:
        try:
            return self._by_id[passage_id]
        except KeyError:
            raise InputError(f"unknown passage id: {passage_id}") from None

    def ids(self) -> Iterable[str]:
        return self._by_id.keys()


@dataclass(frozen=True)
class ConversationalQuery:
    """One turn of a conversation: the current utterance plus everything
    said before it, in order."""

    topic_id: str
    turn: int
    utterance: str
    history: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        if self.turn < 1:
            raise InputError(f"turn must be positive, got {self.turn}")
        if len(self.history) != self.turn - 1:
            raise InputError(
                f"turn {self.turn} of topic {self.topic_id} must carry "
                f"{self.turn - 1} history utterances, got {len(self.history)}"
            )

    @property
    def query_id(self) -> str:
        return f"{self.topic_id}_{self.turn}"


@dataclass(frozen=True)
class LabelingSource:
    """A self-contained rewrite of a conversational query, optionally paired
    with the ground-truth answer for the turn."""

    query_id: str
    rewritten_query: str
    answer: str = ""

    def __post_init__(self) -> None:
        if not self.rewritten_query.strip():
            raise InputError(f"empty rewritten query for {self.query_id}")


class RunEntry(NamedTuple):
    passage_id: str
    rank: int
    score: float


@dataclass(frozen=True)
class RankedList:
    """An ordered retrieval result for one query.

    Invariants, enforced at construction:
      - ranks run 1..len with no gaps,
      - scores (at run-file precision) never increase with rank,
      - entries with equal scores are ordered by ascending passage id,
      - no passage id appears twice.
    """

    query_id: str
    entries: tuple[RunEntry, ...]

    def __post_init__(self) -> None:
        normalized = tuple(
            RunEntry(entry[0], int(entry[1]), quantize_score(entry[2]))
            for entry in self.entries
        )
        object.__setattr__(self, "entries", normalized)
        self._validate()

    def _validate(self) -> None:
        seen: set[str] = set()
        previous: RunEntry | None = None
        for position, entry in enumerate(self.entries, start=1):
            if entry.rank != position:
                raise InputError(
                    f"run for {self.query_id}: rank {entry.rank} at position "
                    f"{position}; ranks must be contiguous from 1"
                )
            if entry.passage_id in seen:
                raise InputError(
                    f"run for {self.query_id}: duplicate passage id {entry.passage_id}"
                )
            seen.add(entry.passage_id)
            if previous is not None:
                if entry.score > previous.score:
                    raise InputError(
                        f"run for {self.query_id}: score increases at rank {entry.rank}"
                    )
                if entry.score == previous.score and entry.passage_id < previous.passage_id:
                    raise InputError(
                        f"run for {self.query_id}: tied scores at rank {entry.rank} "
                        "must be ordered by ascending passage id"
                    )
            previous = entry

    @classmethod
    def from_scores(cls, query_id: str, scores: Mapping[str, float]) -> "RankedList":
        """Rank passages by descending (quantized) score, ties by ascending id."""
        quantized = {pid: quantize_score(s) for pid, s in scores.items()}
        ordered = sorted(quantized.items(), key=lambda item: (-item[1], item[0]))
        entries = tuple(
            RunEntry(pid, position, score)
            for position, (pid, score) in enumerate(ordered, start=1)
        )
        return cls(query_id, entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[RunEntry]:
        return iter(self.entries)

    def passage_ids(self) -> tuple[str, ...]:
        return tuple(entry.passage_id for entry in self.entries)

    def truncate(self, depth: int) -> "RankedList":
        """Keep the top ``depth`` entries; a prefix of a valid list is valid."""
        if depth < 0:
            raise InputError(f"truncation depth must be non-negative, got {depth}")
        if depth >= len(self.entries):
            return self
        return RankedList(self.query_id, self.entries[:depth])


class Qrels:
    """Graded relevance judgments keyed by (query id, passage id)."""

    def __init__(self, judgments: Mapping[tuple[str, str], int]):
        checked: dict[tuple[str, str], int] = {}
        for (query_id, passage_id), grade in judgments.items():
            grade = int(grade)
            if not 0 <= grade <= MAX_GRADE:
                raise InputError(
                    f"grade for ({query_id}, {passage_id}) must be in 0..{MAX_GRADE}, "
                    f"got {grade}"
                )
            checked[(query_id, passage_id)] = grade
        self._judgments = checked

    def __len__(self) -> int:
        return len(self._judgments)

    def grade(self, query_id: str, passage_id: str) -> int:
        """Judged grade, or 0 for unjudged pairs."""
        return self._judgments.get((query_id, passage_id), 0)

    def grades_for(self, query_id: str) -> dict[str, int]:
        return {
            pid: grade
            for (qid, pid), grade in self._judgments.items()
            if qid == query_id
        }

    def query_ids(self) -> tuple[str, ...]:
        return tuple(sorted({qid for qid, _ in self._judgments}))

    def items(self) -> Iterable[tuple[tuple[str, str], int]]:
        return self._judgments.items()


def parse_corpus(path: str | Path, format: str) -> PassageCollection:
    """Ingest a passage corpus from a TSV or JSONL file.

    TSV rows are ``id<TAB>text`` (the text may itself contain tabs); JSONL
    objects carry string fields ``id`` and ``contents``. Duplicate ids and
    malformed rows are rejected with the offending id or line number.
    """
    path = Path(path)
    if format not in ("tsv", "jsonl"):
        raise InputError(f"unknown corpus format: {format!r} (expected tsv or jsonl)")
    passages: list[Passage] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\r\n")
            if format == "tsv":
                if "\t" not in line:
                    raise InputError(f"{path}:{lineno}: expected id<TAB>text")
                pid, text = line.split("\t", 1)
            else:
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
                if (
                    not isinstance(record, dict)
                    or not isinstance(record.get("id"), str)
                    or not isinstance(record.get("contents"), str)
                ):
                    raise InputError(
                        f"{path}:{lineno}: expected object with string 'id' and 'contents'"
                    )
                pid, text = record["id"], record["contents"]
            try:
                passages.append(Passage(pid, text))
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return PassageCollection(passages)


def parse_topics(
    path: str | Path,
) -> tuple[list[ConversationalQuery], list[LabelingSource]]:
    """Read conversational topics and any inline rewrite/answer pairs.

    Each JSONL record needs ``topic_id``, ``turn`` and ``utterance``;
    ``rewrite`` and ``answer`` are optional. The turns of every topic must
    form a contiguous 1..T sequence; each query's history is the utterances
    of all earlier turns of its topic, in turn order.
    """
    path = Path(path)
    by_topic: dict[str, dict[int, dict]] = {}
    topic_order: list[str] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise InputError(f"{path}:{lineno}: expected a JSON object")
            try:
                topic_id = str(record["topic_id"])
                turn = int(record["turn"])
                utterance = str(record["utterance"])
            except (KeyError, TypeError, ValueError) as exc:
                raise InputError(
                    f"{path}:{lineno}: record needs topic_id, turn and utterance: {exc}"
                ) from exc
            if turn < 1:
                raise InputError(f"{path}:{lineno}: turn must be positive, got {turn}")
            if topic_id not in by_topic:
                by_topic[topic_id] = {}
                topic_order.append(topic_id)
            if turn in by_topic[topic_id]:
                raise InputError(
                    f"{path}:{lineno}: duplicate turn {turn} in topic {topic_id}"
                )
            by_topic[topic_id][turn] = record

    queries: list[ConversationalQuery] = []
    sources: list[LabelingSource] = []
    for topic_id in topic_order:
        turns = by_topic[topic_id]
        for expected in range(1, len(turns) + 1):
            if expected not in turns:
                raise InputError(
                    f"topic {topic_id}: missing turn {expected} "
                    f"(turns present: {sorted(turns)})"
                )
        history: list[str] = []
        for turn in range(1, len(turns) + 1):
            record = turns[turn]
            query = ConversationalQuery(
                topic_id=topic_id,
                turn=turn,
                utterance=str(record["utterance"]),
                history=tuple(history),
            )
            queries.append(query)
            rewrite = record.get("rewrite")
            if isinstance(rewrite, str) and rewrite.strip():
                answer = record.get("answer")
                sources.append(
                    LabelingSource(
                        query_id=query.query_id,
                        rewritten_query=rewrite,
                        answer=str(answer) if isinstance(answer, str) else "",
                    )
                )
            history.append(query.utterance)
    return queries, sources


def read_run(path: str | Path) -> dict[str, RankedList]:
    """Read a TREC run file, re-validating every per-query list.

    Comment lines starting with ``#`` (e.g. the ``# seed=`` provenance
    header) are ignored.
    """
    path = Path(path)
    per_query: dict[str, list[RunEntry]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 6:
                raise InputError(
                    f"{path}:{lineno}: expected 6 whitespace-separated fields, "
                    f"got {len(fields)}"
                )
            qid, _q0, docid, rank_text, score_text, _tag = fields
            try:
                rank = int(rank_text)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: unparsable rank {rank_text!r}") from exc
            try:
                score = float(score_text)
            except ValueError as exc:
                raise InputError(
                    f"{path}:{lineno}: unparsable score {score_text!r}"
                ) from exc
            per_query.setdefault(qid, []).append(RunEntry(docid, rank, score))

    runs: dict[str, RankedList] = {}
    for qid, entries in per_query.items():
        entries.sort(key=lambda entry: entry.rank)
        try:
            runs[qid] = RankedList(qid, tuple(entries))
        except InputError as exc:
            raise InputError(f"{path}: {exc}") from exc
    return runs


def write_run(
    runs: Mapping[str, RankedList],
    tag: str,
    path: str | Path,
    seed: int | None = None,
) -> None:
    """Write runs in TREC format, queries sorted by id for determinism.

    When ``seed`` is given, a ``# seed=<n>`` provenance header is emitted
    first; readers tolerate it.
    """
    if not tag or any(ch.isspace() for ch in tag):
        raise InputError(f"run tag must be non-empty and contain no whitespace: {tag!r}")
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        if seed is not None:
            handle.write(f"# seed={seed}\n")
        for qid in sorted(runs):
            for entry in runs[qid].entries:
                handle.write(
                    f"{qid} Q0 {entry.passage_id} {entry.rank} "
                    f"{entry.score:.{SCORE_DECIMALS}f} {tag}\n"
                )


def parse_qrels(path: str | Path) -> Qrels:
    """Read 4-column qrels; a repeated (qid, docid) pair overwrites the
    earlier grade with a warning, since distributed qrels carry revisions."""
    path = Path(path)
    judgments: dict[tuple[str, str], int] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 4:
                raise InputError(
                    f"{path}:{lineno}: expected 4 whitespace-separated fields, "
                    f"got {len(fields)}"
                )
            qid, _iteration, docid, grade_text = fields
            try:
                grade = int(grade_text)
            except ValueError as exc:
                raise InputError(
                    f"{path}:{lineno}: unparsable grade {grade_text!r}"
                ) from exc
            if not 0 <= grade <= MAX_GRADE:
                raise InputError(
                    f"{path}:{lineno}: grade must be in 0..{MAX_GRADE}, got {grade}"
                )
            key = (qid, docid)
            if key in judgments:
                logger.warning(
                    "%s:%d: duplicate judgment for (%s, %s); overwriting %d with %d",
                    path,
                    lineno,
                    qid,
                    docid,
                    judgments[key],
                    grade,
                )
            judgments[key] = grade
    return Qrels(judgments)


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    """Write qrels in 4-column format, sorted by (query id, passage id)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for (qid, pid), grade in sorted(qrels.items()):
            handle.write(f"{qid} 0 {pid} {grade}\n")
