"""First-stage lexical retrieval: analyzer, inverted index, BM25 top-N search.

BM25 with the non-negative idf variant:

    score(q, d) = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len/avglen))
    idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))

Repeated query terms weight their contribution by multiplicity. Because idf
is strictly positive, a score is 0 exactly when no query term occurs in the
passage; search therefore only returns passages containing at least one
query term.

Index construction is single-writer; a built index is immutable and safe
for concurrent searches.
"""

from __future__ import annotations

import json
import logging
import math
import re
import struct
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .datamodel import PassageCollection, RankedList
from .errors import InputError

logger = logging.getLogger(__name__)

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

# maximal runs of letters/digits (unicode-aware, underscore excluded)
_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

_INDEX_MAGIC = b"CFG1"
_INDEX_VERSION = 1


@dataclass(frozen=True)
class Analyzer:
    """Deterministic text-to-terms rule.

    Tokens are maximal runs of letters/digits, lowercased by default, with
    an optional stopword set removed. Tokenization is idempotent on its own
    space-joined output.
    """

    lowercase: bool = True
    stopwords: frozenset[str] | None = None

    def tokenize(self, text: str) -> list[str]:
        if self.lowercase:
            text = text.lower()
        terms = _TOKEN.findall(text)
        if self.stopwords:
            terms = [t for t in terms if t not in self.stopwords]
        return terms


class InvertedIndex:
    """Term postings plus the per-document statistics BM25 needs.

    Use :func:`build_index` to construct one.
    """

    def __init__(
        self,
        postings: dict[str, tuple[tuple[str, int], ...]],
        doc_lengths: dict[str, int],
        analyzer: Analyzer,
        k1: float,
        b: float,
    ):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.doc_count = len(doc_lengths)
        self.avg_doc_length = (
            sum(doc_lengths.values()) / len(doc_lengths) if doc_lengths else 0.0
        )
        self.analyzer = analyzer
        self.k1 = k1
        self.b = b
        self._term_frequency = {
            term: dict(pairs) for term, pairs in postings.items()
        }

    def _idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def _length_norm(self, passage_id: str) -> float:
        return self.k1 * (
            1.0 - self.b + self.b * self.doc_lengths[passage_id] / self.avg_doc_length
        )

    def _contribution(self, count: int, idf: float, tf: int, norm: float) -> float:
        return count * (idf * tf * (self.k1 + 1.0) / (tf + norm))

    def bm25_score(self, query_terms: Sequence[str], passage_id: str) -> float:
        """Score one passage against the query terms; 0.0 iff no term occurs."""
        if passage_id not in self.doc_lengths:
            raise InputError(f"unknown passage id: {passage_id}")
        if self.doc_lengths[passage_id] == 0:
            return 0.0
        norm = self._length_norm(passage_id)
        score = 0.0
        for term, count in Counter(query_terms).items():
            tf = self._term_frequency.get(term, {}).get(passage_id, 0)
            if tf == 0:
                continue
            score += self._contribution(count, self._idf(term), tf, norm)
        return score

    def search(self, query_text: str, n: int, query_id: str = "q0") -> RankedList:
        """Top-``n`` passages containing at least one query term.

        Ordered by descending score, ascending passage id on ties. A query
        that tokenizes to nothing yields an empty list with a warning.
        """
        if n < 1:
            raise InputError(f"search depth must be >= 1, got {n}")
        terms = self.analyzer.tokenize(query_text)
        if not terms:
            logger.warning("query %s tokenizes to no terms: %r", query_id, query_text)
            return RankedList(query_id, ())
        accumulated: dict[str, float] = {}
        for term, count in Counter(terms).items():
            pairs = self.postings.get(term)
            if not pairs:
                continue
            idf = self._idf(term)
            for passage_id, tf in pairs:
                contribution = self._contribution(
                    count, idf, tf, self._length_norm(passage_id)
                )
                accumulated[passage_id] = accumulated.get(passage_id, 0.0) + contribution
        return RankedList.from_scores(query_id, accumulated).truncate(n)

    def save(self, path: str | Path) -> None:
        """Serialize to the versioned binary container (magic ``CFG1``)."""
        payload = {
            "k1": self.k1,
            "b": self.b,
            "analyzer": {
                "lowercase": self.analyzer.lowercase,
                "stopwords": sorted(self.analyzer.stopwords)
                if self.analyzer.stopwords
                else None,
            },
            "doc_lengths": self.doc_lengths,
            "postings": {term: [list(p) for p in pairs] for term, pairs in self.postings.items()},
        }
        body = zlib.compress(json.dumps(payload, sort_keys=True).encode("utf-8"))
        with Path(path).open("wb") as handle:
            handle.write(_INDEX_MAGIC)
            handle.write(struct.pack("<HH", _INDEX_VERSION, 0))
            handle.write(body)

    @classmethod
    def load(cls, path: str | Path) -> "InvertedIndex":
        path = Path(path)
        raw = path.read_bytes()
        if raw[:4] != _INDEX_MAGIC:
            raise InputError(f"{path}: not an index file (bad magic)")
        if len(raw) < 8:
            raise InputError(f"{path}: truncated index file")
        version, _flags = struct.unpack("<HH", raw[4:8])
        if version != _INDEX_VERSION:
            raise InputError(f"{path}: unsupported index version {version}")
        try:
            payload = json.loads(zlib.decompress(raw[8:]).decode("utf-8"))
        except (zlib.error, json.JSONDecodeError) as exc:
            raise InputError(f"{path}: corrupt index body: {exc}") from exc
        stopwords = payload["analyzer"]["stopwords"]
        analyzer = Analyzer(
            lowercase=payload["analyzer"]["lowercase"],
            stopwords=frozenset(stopwords) if stopwords is not None else None,
        )
        postings = {
            term: tuple((pid, int(tf)) for pid, tf in pairs)
            for term, pairs in payload["postings"].items()
        }
        doc_lengths = {pid: int(length) for pid, length in payload["doc_lengths"].items()}
        return cls(postings, doc_lengths, analyzer, payload["k1"], payload["b"])


def build_index(
    collection: PassageCollection,
    analyzer: Analyzer | None = None,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> InvertedIndex:
    """Index a non-empty collection. Postings lists are sorted by passage id;
    the sum of a passage's term frequencies equals its stored length."""
    if len(collection) == 0:
        raise InputError("cannot index an empty collection")
    analyzer = analyzer if analyzer is not None else Analyzer()
    postings_builder: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for passage in collection:
        terms = analyzer.tokenize(passage.text)
        doc_lengths[passage.id] = len(terms)
        for term, tf in Counter(terms).items():
            postings_builder.setdefault(term, []).append((passage.id, tf))
    postings = {
        term: tuple(sorted(pairs)) for term, pairs in postings_builder.items()
    }
    return InvertedIndex(postings, doc_lengths, analyzer, k1, b)
