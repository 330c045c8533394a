import json
import logging
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turnrank.datamodel import (
    ConversationalQuery,
    Passage,
    PassageCollection,
    Qrels,
    RankedList,
    RunEntry,
    parse_corpus,
    parse_qrels,
    parse_topics,
    read_run,
    write_qrels,
    write_run,
)
from turnrank.errors import InputError

from conftest import random_ranked_list


class TestPassage:
    def test_rejects_empty_id(self):
        with pytest.raises(InputError):
            Passage("", "text")

    def test_rejects_whitespace_id(self):
        with pytest.raises(InputError):
            Passage("a b", "text")

    def test_collection_lookup_returns_ingested_text(self):
        coll = PassageCollection([Passage("p1", "alpha"), Passage("p2", "beta")])
        assert coll.get("p1").text == "alpha"
        assert len(coll) == 2

    def test_collection_rejects_duplicates(self):
        with pytest.raises(InputError, match="p1"):
            PassageCollection([Passage("p1", "a"), Passage("p1", "b")])


class TestParseCorpus:
    def test_tsv_ingestion(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("p1\talpha\np2\tbeta\n", encoding="utf-8")
        coll = parse_corpus(path, "tsv")
        assert len(coll) == 2
        assert coll.get("p2").text == "beta"

    def test_tsv_keeps_tabs_inside_text(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("p1\talpha\tbeta\n", encoding="utf-8")
        assert parse_corpus(path, "tsv").get("p1").text == "alpha\tbeta"

    def test_jsonl_ingestion(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        rows = [{"id": "p1", "contents": "alpha"}, {"id": "p2", "contents": "beta"}]
        path.write_text("\n".join(json.dumps(r) for r in rows), encoding="utf-8")
        coll = parse_corpus(path, "jsonl")
        assert len(coll) == 2

    def test_empty_file(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("", encoding="utf-8")
        assert len(parse_corpus(path, "tsv")) == 0

    def test_duplicate_id_names_the_id(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("p1\ta\np1\tb\n", encoding="utf-8")
        with pytest.raises(InputError, match="p1"):
            parse_corpus(path, "tsv")

    def test_malformed_row_names_line_number(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("p1\ta\nno-tab-here\n", encoding="utf-8")
        with pytest.raises(InputError, match=":2"):
            parse_corpus(path, "tsv")

    def test_jsonl_bad_json_names_line_number(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text('{"id": "p1", "contents": "a"}\n{oops\n', encoding="utf-8")
        with pytest.raises(InputError, match=":2"):
            parse_corpus(path, "jsonl")

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "corpus.xml"
        path.write_text("", encoding="utf-8")
        with pytest.raises(InputError):
            parse_corpus(path, "xml")


def _write_topics(tmp_path, records):
    path = tmp_path / "topics.jsonl"
    path.write_text(
        "\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8"
    )
    return path


class TestParseTopics:
    def test_history_accumulates_in_turn_order(self, tmp_path):
        path = _write_topics(
            tmp_path,
            [
                {"topic_id": "T", "turn": 1, "utterance": "u1"},
                {"topic_id": "T", "turn": 2, "utterance": "u2"},
                {"topic_id": "T", "turn": 3, "utterance": "u3"},
            ],
        )
        queries, _ = parse_topics(path)
        assert queries[2].history == ("u1", "u2")
        assert queries[2].query_id == "T_3"

    def test_single_turn_topic_has_empty_history(self, tmp_path):
        path = _write_topics(tmp_path, [{"topic_id": "T", "turn": 1, "utterance": "u"}])
        queries, _ = parse_topics(path)
        assert queries[0].history == ()

    def test_gap_in_turns_names_missing_turn(self, tmp_path):
        path = _write_topics(
            tmp_path,
            [
                {"topic_id": "T", "turn": 1, "utterance": "u1"},
                {"topic_id": "T", "turn": 3, "utterance": "u3"},
            ],
        )
        with pytest.raises(InputError, match="turn 2"):
            parse_topics(path)

    def test_non_positive_turn_rejected(self, tmp_path):
        path = _write_topics(tmp_path, [{"topic_id": "T", "turn": 0, "utterance": "u"}])
        with pytest.raises(InputError):
            parse_topics(path)

    def test_duplicate_turn_rejected(self, tmp_path):
        path = _write_topics(
            tmp_path,
            [
                {"topic_id": "T", "turn": 1, "utterance": "a"},
                {"topic_id": "T", "turn": 1, "utterance": "b"},
            ],
        )
        with pytest.raises(InputError, match="duplicate turn"):
            parse_topics(path)

    def test_rewrite_and_answer_become_labeling_source(self, tmp_path):
        path = _write_topics(
            tmp_path,
            [
                {"topic_id": "T", "turn": 1, "utterance": "u",
                 "rewrite": "rewritten u", "answer": "the answer"},
                {"topic_id": "T", "turn": 2, "utterance": "v"},
            ],
        )
        _, sources = parse_topics(path)
        assert len(sources) == 1
        assert sources[0].query_id == "T_1"
        assert sources[0].rewritten_query == "rewritten u"
        assert sources[0].answer == "the answer"

    def test_interleaved_topics_allowed(self, tmp_path):
        path = _write_topics(
            tmp_path,
            [
                {"topic_id": "A", "turn": 1, "utterance": "a1"},
                {"topic_id": "B", "turn": 1, "utterance": "b1"},
                {"topic_id": "A", "turn": 2, "utterance": "a2"},
            ],
        )
        queries, _ = parse_topics(path)
        assert [q.query_id for q in queries] == ["A_1", "A_2", "B_1"]

    @given(turn_count=st.integers(min_value=1, max_value=12))
    @settings(max_examples=25, deadline=None)
    def test_history_length_is_turn_minus_one(self, turn_count, tmp_path_factory):
        tmp_path = tmp_path_factory.mktemp("topics")
        path = _write_topics(
            tmp_path,
            [
                {"topic_id": "T", "turn": i, "utterance": f"u{i}"}
                for i in range(1, turn_count + 1)
            ],
        )
        queries, _ = parse_topics(path)
        for query in queries:
            assert len(query.history) == query.turn - 1


class TestConversationalQuery:
    def test_history_must_match_turn(self):
        with pytest.raises(InputError):
            ConversationalQuery("T", 3, "u", ("only-one",))

    def test_turn_must_be_positive(self):
        with pytest.raises(InputError):
            ConversationalQuery("T", 0, "u")


class TestRankedList:
    def test_rank_gap_rejected(self):
        with pytest.raises(InputError, match="contiguous"):
            RankedList("q", (RunEntry("a", 1, 2.0), RunEntry("b", 3, 1.0)))

    def test_duplicate_passage_rejected(self):
        with pytest.raises(InputError, match="duplicate"):
            RankedList("q", (RunEntry("a", 1, 2.0), RunEntry("a", 2, 1.0)))

    def test_increasing_score_rejected(self):
        with pytest.raises(InputError, match="increases"):
            RankedList("q", (RunEntry("a", 1, 1.0), RunEntry("b", 2, 2.0)))

    def test_tied_scores_must_ascend_by_id(self):
        with pytest.raises(InputError, match="ascending"):
            RankedList("q", (RunEntry("b", 1, 1.0), RunEntry("a", 2, 1.0)))
        RankedList("q", (RunEntry("a", 1, 1.0), RunEntry("b", 2, 1.0)))

    def test_from_scores_orders_and_quantizes(self):
        ranked = RankedList.from_scores("q", {"a": 1.0, "b": 2.45678949, "c": 1.0})
        assert ranked.passage_ids() == ("b", "a", "c")
        assert ranked.entries[0].score == 2.456789

    def test_nan_score_rejected(self):
        with pytest.raises(InputError):
            RankedList.from_scores("q", {"a": float("nan")})

    def test_truncate_keeps_prefix(self):
        ranked = RankedList.from_scores("q", {"a": 3.0, "b": 2.0, "c": 1.0})
        assert ranked.truncate(2).passage_ids() == ("a", "b")
        assert ranked.truncate(9) is ranked


class TestRunIO:
    def test_single_line_round_trip(self, tmp_path):
        path = tmp_path / "a.run"
        path.write_text("31_1 Q0 p7 1 12.500000 bm25\n", encoding="utf-8")
        runs = read_run(path)
        entry = runs["31_1"].entries[0]
        assert entry == ("p7", 1, 12.5)

    def test_write_then_read_is_identity(self, tmp_path):
        rng = random.Random(11)
        runs = {f"q{i}": random_ranked_list(rng, f"q{i}", 100) for i in range(4)}
        path = tmp_path / "a.run"
        write_run(runs, "tag", path)
        loaded = read_run(path)
        assert set(loaded) == {qid for qid, r in runs.items() if r.entries}
        for qid, ranked in loaded.items():
            assert ranked.entries == runs[qid].entries

    def test_round_trip_is_byte_identical(self, tmp_path):
        rng = random.Random(13)
        runs = {"qa": random_ranked_list(rng, "qa", 100)}
        first = tmp_path / "first.run"
        second = tmp_path / "second.run"
        write_run(runs, "tag", first)
        write_run(read_run(first), "tag", second)
        assert first.read_bytes() == second.read_bytes()

    def test_seed_header_is_tolerated_and_stripped(self, tmp_path):
        path = tmp_path / "a.run"
        write_run({"q": RankedList.from_scores("q", {"a": 1.0})}, "t", path, seed=42)
        assert path.read_text().startswith("# seed=42\n")
        assert read_run(path)["q"].passage_ids() == ("a",)

    def test_non_contiguous_ranks_rejected(self, tmp_path):
        path = tmp_path / "a.run"
        path.write_text(
            "q Q0 a 1 2.000000 t\nq Q0 b 3 1.000000 t\n", encoding="utf-8"
        )
        with pytest.raises(InputError, match="contiguous"):
            read_run(path)

    def test_unparsable_score_rejected(self, tmp_path):
        path = tmp_path / "a.run"
        path.write_text("q Q0 a 1 not-a-score t\n", encoding="utf-8")
        with pytest.raises(InputError, match="score"):
            read_run(path)

    def test_bad_tag_rejected(self, tmp_path):
        with pytest.raises(InputError):
            write_run({}, "has space", tmp_path / "a.run")

    @given(data=st.data())
    @settings(max_examples=30, deadline=None)
    def test_round_trip_property(self, data, tmp_path_factory):
        seed = data.draw(st.integers(min_value=0, max_value=2**32 - 1))
        rng = random.Random(seed)
        runs = {
            f"q{i}": random_ranked_list(rng, f"q{i}", 40)
            for i in range(rng.randint(1, 5))
        }
        runs = {qid: r for qid, r in runs.items() if r.entries}
        tmp_path = tmp_path_factory.mktemp("runs")
        path = tmp_path / "x.run"
        write_run(runs, "t", path)
        loaded = read_run(path)
        assert {qid: r.entries for qid, r in loaded.items()} == {
            qid: r.entries for qid, r in runs.items()
        }


class TestQrels:
    def test_parse_and_lookup(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("31_1 0 p7 3\n31_1 0 p8 0\n", encoding="utf-8")
        qrels = parse_qrels(path)
        assert qrels.grade("31_1", "p7") == 3
        assert qrels.grade("31_1", "missing") == 0

    def test_empty_file(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("", encoding="utf-8")
        assert len(parse_qrels(path)) == 0

    def test_grade_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q 0 p 5\n", encoding="utf-8")
        with pytest.raises(InputError, match="0..4"):
            parse_qrels(path)

    def test_duplicate_overwrites_with_warning(self, tmp_path, caplog):
        path = tmp_path / "qrels.txt"
        path.write_text("q 0 p 1\nq 0 p 3\n", encoding="utf-8")
        with caplog.at_level(logging.WARNING):
            qrels = parse_qrels(path)
        assert qrels.grade("q", "p") == 3
        assert any("overwriting" in rec.message for rec in caplog.records)

    def test_write_then_read_round_trips(self, tmp_path):
        rng = random.Random(3)
        judgments = {
            (f"q{rng.randint(0, 5)}", f"d{i}"): rng.randint(0, 4) for i in range(50)
        }
        qrels = Qrels(judgments)
        first = tmp_path / "a.qrels"
        second = tmp_path / "b.qrels"
        write_qrels(qrels, first)
        write_qrels(parse_qrels(first), second)
        assert first.read_bytes() == second.read_bytes()
        assert dict(parse_qrels(first).items()) == dict(qrels.items())

    def test_type_rejects_bad_grade(self):
        with pytest.raises(InputError):
            Qrels({("q", "p"): 9})
