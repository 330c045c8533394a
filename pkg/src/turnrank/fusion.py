"""Rank fusion: the two-view ensemble filter and reciprocal-rank fusion.

The ensemble filter stably reorders a primary ranked list so that every
passage also present in a second (filter) list comes first, followed by the
passages unique to the primary list; relative order inside each block is
the primary list's own. Passages only in the filter list never enter the
output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .datamodel import RankedList, RunEntry
from .errors import InputError

DEFAULT_RRF_K = 60.0


@dataclass(frozen=True)
class EnsembleList:
    """A filtered ranked list plus the size of its agreed block.

    ``ranking.entries[:boundary]`` are the passages present in both input
    lists, ``ranking.entries[boundary:]`` those only in the primary list.
    """

    ranking: RankedList
    boundary: int

    @property
    def agreed(self) -> tuple[RunEntry, ...]:
        return self.ranking.entries[: self.boundary]

    @property
    def disagreed(self) -> tuple[RunEntry, ...]:
        return self.ranking.entries[self.boundary:]


def ensemble_filter(
    primary_view: RankedList,
    filter_view: RankedList,
    filter_depth: int | None = None,
) -> EnsembleList:
    """Push the primary-view passages confirmed by the filter view ahead of
    the rest, keeping the primary view's relative order within each block.

    Membership is tested against the whole filter list by default, or
    against its top ``filter_depth`` entries. Scores are reassigned
    positionally (len - rank + 1) since only the order is meaningful.
    """
    if primary_view.query_id != filter_view.query_id:
        raise InputError(
            f"cannot ensemble lists for different queries: "
            f"{primary_view.query_id} vs {filter_view.query_id}"
        )
    if filter_depth is not None and filter_depth < 1:
        raise InputError(f"filter_depth must be >= 1, got {filter_depth}")
    filter_ids = set(
        filter_view.passage_ids()
        if filter_depth is None
        else filter_view.passage_ids()[:filter_depth]
    )
    agreed = [e for e in primary_view.entries if e.passage_id in filter_ids]
    disagreed = [e for e in primary_view.entries if e.passage_id not in filter_ids]
    total = len(primary_view)
    entries = tuple(
        RunEntry(entry.passage_id, position, float(total - position + 1))
        for position, entry in enumerate(agreed + disagreed, start=1)
    )
    return EnsembleList(
        ranking=RankedList(primary_view.query_id, entries),
        boundary=len(agreed),
    )


def reverse_ensemble_filter(
    query_view: RankedList,
    answer_view: RankedList,
    filter_depth: int | None = None,
) -> EnsembleList:
    """The ensemble with the two views' roles swapped: the answer view is
    reordered and the query view acts as the filter."""
    return ensemble_filter(answer_view, query_view, filter_depth)


def rrf(lists: Sequence[RankedList], k_rrf: float = DEFAULT_RRF_K) -> RankedList:
    """Reciprocal-rank fusion: score(d) = sum over lists of 1 / (k + rank_d),
    with absent documents contributing nothing from that list.

    Fused output is sorted by descending score, ascending passage id on
    ties. Requires at least two lists for the same query.
    """
    if len(lists) < 2:
        raise InputError(f"rrf needs at least 2 ranked lists, got {len(lists)}")
    if k_rrf <= 0:
        raise InputError(f"rrf constant must be positive, got {k_rrf}")
    query_id = lists[0].query_id
    for ranked in lists[1:]:
        if ranked.query_id != query_id:
            raise InputError(
                f"cannot fuse lists for different queries: "
                f"{query_id} vs {ranked.query_id}"
            )
    contributions: dict[str, list[float]] = {}
    for ranked in lists:
        for entry in ranked.entries:
            contributions.setdefault(entry.passage_id, []).append(
                1.0 / (k_rrf + entry.rank)
            )
    # fsum is exactly rounded, so fused scores are list-order independent
    fused = {pid: math.fsum(values) for pid, values in contributions.items()}
    return RankedList.from_scores(query_id, fused)
