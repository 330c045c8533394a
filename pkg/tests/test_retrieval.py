import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turnrank.datamodel import Passage, PassageCollection
from turnrank.errors import InputError
from turnrank.retrieval import Analyzer, InvertedIndex, build_index

WORDS = ["cat", "dog", "fish", "bird", "tree", "rock", "wind", "rain", "sun", "moon"]


def random_collection(rng: random.Random, max_docs: int = 60) -> PassageCollection:
    docs = rng.randint(2, max_docs)
    return PassageCollection(
        Passage(f"d{i:04d}", " ".join(rng.choices(WORDS, k=rng.randint(1, 30))))
        for i in range(docs)
    )


def reference_bm25(collection, analyzer, query_terms, passage_id, k1, b):
    """Independent recomputation of the scoring formula from the raw corpus."""
    token_lists = {p.id: analyzer.tokenize(p.text) for p in collection}
    doc_count = len(token_lists)
    avgdl = sum(len(t) for t in token_lists.values()) / doc_count
    doc_terms = Counter(token_lists[passage_id])
    doc_len = len(token_lists[passage_id])
    score = 0.0
    for term, count in Counter(query_terms).items():
        tf = doc_terms.get(term, 0)
        if tf == 0:
            continue
        df = sum(1 for terms in token_lists.values() if term in terms)
        idf = math.log(1.0 + (doc_count - df + 0.5) / (df + 0.5))
        score += count * (idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / avgdl)))
    return score


class TestAnalyzer:
    def test_alphanumeric_runs_lowercased(self):
        assert Analyzer().tokenize("Imaginarium, the album!") == [
            "imaginarium", "the", "album",
        ]

    def test_empty_text(self):
        assert Analyzer().tokenize("") == []

    def test_digits_kept_underscore_split(self):
        assert Analyzer().tokenize("extra_id_10") == ["extra", "id", "10"]

    def test_stopwords_removed(self):
        analyzer = Analyzer(stopwords=frozenset({"the"}))
        assert analyzer.tokenize("the cat the hat") == ["cat", "hat"]

    @given(st.text(max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_idempotent_on_own_output(self, text):
        analyzer = Analyzer()
        once = analyzer.tokenize(text)
        assert analyzer.tokenize(" ".join(once)) == once

    def test_idempotent_with_stopwords(self):
        analyzer = Analyzer(stopwords=frozenset({"a", "the"}))
        once = analyzer.tokenize("A cat saw the DOG, twice!")
        assert analyzer.tokenize(" ".join(once)) == once


class TestBuildIndex:
    def test_postings_and_average_length(self):
        coll = PassageCollection([Passage("d1", "a b"), Passage("d2", "a")])
        index = build_index(coll)
        assert index.postings["a"] == (("d1", 1), ("d2", 1))
        assert index.avg_doc_length == 1.5
        assert index.doc_count == 2

    def test_single_doc_average(self):
        coll = PassageCollection([Passage("d1", "x y z")])
        assert build_index(coll).avg_doc_length == 3.0

    def test_empty_collection_rejected(self):
        with pytest.raises(InputError):
            build_index(PassageCollection([]))

    def test_term_frequencies_sum_to_doc_length(self):
        rng = random.Random(5)
        for _ in range(20):
            coll = random_collection(rng)
            index = build_index(coll)
            recounted: dict[str, int] = {}
            for term, pairs in index.postings.items():
                for pid, tf in pairs:
                    recounted[pid] = recounted.get(pid, 0) + tf
            for pid, length in index.doc_lengths.items():
                assert recounted.get(pid, 0) == length
            assert index.avg_doc_length == pytest.approx(
                sum(index.doc_lengths.values()) / index.doc_count
            )

    def test_postings_sorted_by_passage_id(self):
        rng = random.Random(6)
        index = build_index(random_collection(rng))
        for pairs in index.postings.values():
            assert list(pairs) == sorted(pairs)


class TestBM25Score:
    def test_hand_evaluated_two_doc_case(self):
        coll = PassageCollection([Passage("d1", "cat"), Passage("d2", "dog")])
        index = build_index(coll, k1=0.9, b=0.4)
        assert index.bm25_score(["cat"], "d1") == pytest.approx(math.log(2), abs=1e-6)

    def test_zero_iff_no_query_term_present(self):
        coll = PassageCollection([Passage("d1", "cat"), Passage("d2", "dog")])
        index = build_index(coll)
        assert index.bm25_score(["dog"], "d1") == 0.0
        assert index.bm25_score(["dog", "cat"], "d1") > 0.0

    def test_unknown_passage_rejected(self):
        index = build_index(PassageCollection([Passage("d1", "cat")]))
        with pytest.raises(InputError, match="ghost"):
            index.bm25_score(["cat"], "ghost")

    def test_matches_reference_on_random_corpora(self):
        rng = random.Random(7)
        analyzer = Analyzer()
        for _ in range(15):
            coll = random_collection(rng, max_docs=25)
            index = build_index(coll, analyzer, k1=0.9, b=0.4)
            query = rng.choices(WORDS, k=rng.randint(1, 4))
            for passage in coll:
                assert index.bm25_score(query, passage.id) == pytest.approx(
                    reference_bm25(coll, analyzer, query, passage.id, 0.9, 0.4),
                    abs=1e-9,
                )

    def test_more_occurrences_never_score_lower(self):
        # same doc length, same corpus stats, higher tf of the query term
        rng = random.Random(8)
        for _ in range(25):
            filler = rng.choice(WORDS[1:])
            low_tf = rng.randint(1, 3)
            high_tf = low_tf + rng.randint(1, 4)
            text_low = " ".join(["cat"] * low_tf + [filler] * (8 - low_tf))
            text_high = " ".join(["cat"] * high_tf + [filler] * (8 - high_tf))
            coll = PassageCollection(
                [Passage("low", text_low), Passage("high", text_high),
                 Passage("pad", " ".join(rng.choices(WORDS, k=6)))]
            )
            index = build_index(coll)
            assert index.bm25_score(["cat"], "high") >= index.bm25_score(["cat"], "low")


class TestSearch:
    def test_single_matching_doc(self, tiny_collection):
        index = build_index(tiny_collection)
        ranked = index.search("penguins", 10, "q1")
        assert ranked.passage_ids() == ("p3",)
        assert ranked.entries[0].rank == 1

    def test_ties_break_by_ascending_passage_id(self):
        coll = PassageCollection([Passage("b", "cat"), Passage("a", "cat")])
        index = build_index(coll)
        assert index.search("cat", 5).passage_ids() == ("a", "b")

    def test_empty_query_warns_and_returns_empty(self, tiny_collection, caplog):
        index = build_index(tiny_collection)
        import logging

        with caplog.at_level(logging.WARNING):
            ranked = index.search("!!!", 5, "q9")
        assert len(ranked) == 0
        assert any("q9" in rec.message for rec in caplog.records)

    def test_depth_must_be_positive(self, tiny_collection):
        index = build_index(tiny_collection)
        with pytest.raises(InputError):
            index.search("cat", 0)

    def test_matches_exhaustive_scoring_oracle(self):
        rng = random.Random(9)
        for _ in range(25):
            coll = random_collection(rng, max_docs=40)
            index = build_index(coll, k1=0.9, b=0.4)
            query_terms = rng.choices(WORDS, k=rng.randint(1, 5))
            n = rng.randint(1, 10)
            got = index.search(" ".join(query_terms), n, "q")

            scored = [
                (index.bm25_score(query_terms, p.id), p.id)
                for p in coll
            ]
            expected = sorted(
                ((round(s, 6), pid) for s, pid in scored if s > 0),
                key=lambda pair: (-pair[0], pair[1]),
            )[:n]
            assert [(e.passage_id, e.score) for e in got.entries] == [
                (pid, score) for score, pid in expected
            ]


class TestIndexSerialization:
    def test_save_load_round_trip(self, tmp_path, tiny_collection):
        index = build_index(tiny_collection, Analyzer(stopwords=frozenset({"the"})))
        path = tmp_path / "index.cfg"
        index.save(path)
        loaded = InvertedIndex.load(path)
        assert loaded.postings == index.postings
        assert loaded.doc_lengths == index.doc_lengths
        assert loaded.analyzer == index.analyzer
        assert (loaded.k1, loaded.b) == (index.k1, index.b)
        assert loaded.search("imaginarium cast", 5).entries == index.search(
            "imaginarium cast", 5
        ).entries

    def test_magic_bytes(self, tmp_path, tiny_collection):
        path = tmp_path / "index.cfg"
        build_index(tiny_collection).save(path)
        assert path.read_bytes()[:4] == b"CFG1"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.cfg"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(InputError, match="magic"):
            InvertedIndex.load(path)

    def test_corrupt_body_rejected(self, tmp_path):
        path = tmp_path / "corrupt.cfg"
        path.write_bytes(b"CFG1\x01\x00\x00\x00garbage")
        with pytest.raises(InputError, match="corrupt"):
            InvertedIndex.load(path)
