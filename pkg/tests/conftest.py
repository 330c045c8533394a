import random

import pytest

from turnrank.datamodel import Passage, PassageCollection, RankedList, RunEntry


@pytest.fixture
def tiny_collection() -> PassageCollection:
    return PassageCollection(
        [
            Passage("p1", "the imaginarium album was released in spring"),
            Passage("p2", "the imaginarium film features a large cast"),
            Passage("p3", "a documentary about penguins in antarctica"),
            Passage("p4", "the cast of the film includes two brothers"),
            Passage("p5", "album reviews praised the spring release"),
        ]
    )


def random_ranked_list(rng: random.Random, query_id: str, max_len: int = 200) -> RankedList:
    """A valid ranked list with random ids and 6-decimal scores."""
    length = rng.randint(0, max_len)
    ids = rng.sample([f"d{i}" for i in range(max_len * 3)], length)
    scores = sorted(
        (round(rng.uniform(0, 20), 6) for _ in range(length)), reverse=True
    )
    # regroup tied scores so ties are ordered by ascending passage id
    by_score: dict[float, list[str]] = {}
    for pid, score in zip(ids, scores):
        by_score.setdefault(score, []).append(pid)
    entries = []
    position = 1
    for score in sorted(by_score, reverse=True):
        for pid in sorted(by_score[score]):
            entries.append(RunEntry(pid, position, score))
            position += 1
    return RankedList(query_id, tuple(entries))
